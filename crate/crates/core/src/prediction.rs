//! Probability vectors over (survival, CIF₁, …, CIF_K) and the common
//! interface shared by every model that produces them.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

/// `[S(ζ|x), F₁(ζ|x), …, F_K(ζ|x)]` at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceVector {
    probs: Vec<f64>,
}

impl IncidenceVector {
    /// Wraps a probability vector whose first entry is the survival.
    pub fn from_probs(probs: Vec<f64>) -> Self {
        debug_assert!(probs.len() >= 2);
        Self { probs }
    }

    /// The exact vector at ζ = 0: nothing has happened yet.
    pub fn at_origin(n_events: usize) -> Self {
        let mut probs = vec![0.0; n_events + 1];
        probs[0] = 1.0;
        Self { probs }
    }

    pub fn survival(&self) -> f64 {
        self.probs[0]
    }

    /// CIF of event `k` (1-based).
    pub fn cif(&self, k: usize) -> f64 {
        self.probs[k]
    }

    pub fn n_events(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// Most probable outcome, 0 being survival; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate().skip(1) {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// Anything that maps covariates and a horizon to an [`IncidenceVector`].
pub trait IncidencePredictor: Sync {
    fn n_events(&self) -> usize;

    fn predict(&self, row: &[f64], horizon: f64) -> IncidenceVector;

    /// Predictions for one row across ascending horizons.
    fn predict_curve(&self, row: &[f64], horizons: &[f64]) -> Vec<IncidenceVector> {
        horizons.iter().map(|&h| self.predict(row, h)).collect()
    }
}

/// Dense `rows × horizons × (K+1)` block of predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCube {
    n_rows: usize,
    horizons: Vec<f64>,
    n_classes: usize,
    values: Vec<f64>,
}

impl PredictionCube {
    pub fn new(n_rows: usize, horizons: Vec<f64>, n_classes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * horizons.len() * n_classes {
            return Err(Error::Shape(format!(
                "prediction block has {} values, expected {}×{}×{}",
                values.len(),
                n_rows,
                horizons.len(),
                n_classes
            )));
        }
        Ok(Self {
            n_rows,
            horizons,
            n_classes,
            values,
        })
    }

    /// Evaluates `predictor` on every dataset row at every horizon.
    pub fn from_predictor<P: IncidencePredictor + ?Sized>(
        predictor: &P,
        dataset: &SurvivalDataset,
        horizons: &[f64],
    ) -> Self {
        Self::from_feature_rows(predictor, dataset.features(), dataset.n_rows(), horizons)
    }

    /// Same as [`PredictionCube::from_predictor`] for a row-major feature
    /// matrix of `n_rows` rows.
    pub fn from_feature_rows<P: IncidencePredictor + ?Sized>(
        predictor: &P,
        features: &[f64],
        n_rows: usize,
        horizons: &[f64],
    ) -> Self {
        let n_classes = predictor.n_events() + 1;
        let per_row = horizons.len() * n_classes;
        let d = features.len().checked_div(n_rows).unwrap_or(0);
        let mut values = vec![0.0; n_rows * per_row];
        if per_row > 0 {
            values
                .par_chunks_mut(per_row)
                .enumerate()
                .for_each(|(i, out)| {
                    let curve = predictor.predict_curve(&features[i * d..(i + 1) * d], horizons);
                    for (slot, v) in out.chunks_mut(n_classes).zip(curve) {
                        slot.copy_from_slice(v.probs());
                    }
                });
        }
        Self {
            n_rows,
            horizons: horizons.to_vec(),
            n_classes,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_events(&self) -> usize {
        self.n_classes - 1
    }

    pub fn horizons(&self) -> &[f64] {
        &self.horizons
    }

    /// Probability vector of `row` at horizon index `h`.
    pub fn get(&self, row: usize, h: usize) -> &[f64] {
        let start = (row * self.horizons.len() + h) * self.n_classes;
        &self.values[start..start + self.n_classes]
    }

    /// Per-row probability of `class` (0 = survival) at horizon index `h`.
    pub fn column(&self, h: usize, class: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, h)[class]).collect()
    }

    /// Per-row vectors at horizon index `h`.
    pub fn at_horizon(&self, h: usize) -> Vec<IncidenceVector> {
        (0..self.n_rows)
            .map(|i| IncidenceVector::from_probs(self.get(i, h).to_vec()))
            .collect()
    }

    /// One line per `(row, horizon)`: `row,horizon,survival,cif_1,…,cif_K`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_string(), "horizon".into(), "survival".into()];
        header.extend((1..self.n_classes).map(|k| format!("cif_{k}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_rows {
            for (h, zeta) in self.horizons.iter().enumerate() {
                record.clear();
                record.push(i.to_string());
                record.push(zeta.to_string());
                record.extend(self.get(i, h).iter().map(|p| p.to_string()));
                w.write_record(&record)?;
            }
        }
        w.flush().map_err(|e| Error::io("<predictions>", e))?;
        Ok(())
    }

    /// Reads the layout written by [`PredictionCube::write_csv`]. Every
    /// `(row, horizon)` pair must be present exactly once.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header.len() < 4 || header[0] != "row" || header[1] != "horizon" || header[2] != "survival" {
            return Err(Error::Shape(
                "prediction header must be row,horizon,survival,cif_1,...".into(),
            ));
        }
        for (k, name) in header[3..].iter().enumerate() {
            if *name != format!("cif_{}", k + 1) {
                return Err(Error::MissingColumn(format!("cif_{}", k + 1)));
            }
        }
        let n_classes = header.len() - 2;
        let mut entries: Vec<(usize, f64, Vec<f64>)> = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let field = |j: usize| -> Result<f64> {
                let raw = record.get(j).unwrap_or("").trim();
                raw.parse::<f64>().map_err(|_| Error::NonNumeric {
                    row: line,
                    column: header[j].clone(),
                    value: raw.to_string(),
                })
            };
            let row = record.get(0).unwrap_or("").trim();
            let row: usize = row.parse().map_err(|_| Error::NonNumeric {
                row: line,
                column: "row".into(),
                value: row.to_string(),
            })?;
            let probs = (2..header.len()).map(field).collect::<Result<Vec<f64>>>()?;
            entries.push((row, field(1)?, probs));
        }
        let mut horizons: Vec<f64> = entries.iter().map(|e| e.1).collect();
        horizons.sort_by(f64::total_cmp);
        horizons.dedup();
        let n_rows = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let mut values = vec![f64::NAN; n_rows * horizons.len() * n_classes];
        let mut filled = vec![false; n_rows * horizons.len()];
        for (row, zeta, probs) in entries {
            let h = horizons.partition_point(|&v| v < zeta);
            let slot = row * horizons.len() + h;
            if filled[slot] {
                return Err(Error::Shape(format!("duplicate prediction for row {row} at {zeta}")));
            }
            filled[slot] = true;
            values[slot * n_classes..(slot + 1) * n_classes].copy_from_slice(&probs);
        }
        if let Some(slot) = filled.iter().position(|f| !f) {
            return Err(Error::Shape(format!(
                "missing prediction for row {} at horizon {}",
                slot / horizons.len(),
                horizons[slot % horizons.len()]
            )));
        }
        Self::new(n_rows, horizons, n_classes, values)
    }
}
