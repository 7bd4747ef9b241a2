//! Simulation benchmark: fit on a simulated training sample, score the
//! MultiIncidence model, the Aalen–Johansen baseline and the true law on an
//! independent test sample from the same law.
//!
//! By default the test sample is drawn without censoring, so the Brier
//! scores are exact rather than IPCW estimates and cells with different
//! training censoring are scored on the same sample. With a censored test
//! sample the weights come from the true censoring law.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::TimeGrid;
use crate::error::{Error, Result};
use crate::marginal::{aalen_johansen, DEFAULT_CLIP_FLOOR};
use crate::metrics::{default_ibs_grid, integrated_brier_of, DEFAULT_GRID_POINTS};
use crate::multiincidence::{fit, TrainConfig};
use crate::synthgen::{generate, SynthConfig, SynthOutput};

/// Offset between a cell's training seed and its test seed.
const TEST_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub n: usize,
    pub censoring: f64,
    pub d: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub n_events: usize,
    /// Leading features that drive censoring, capped at `d`.
    pub censoring_dependence: usize,
    pub n_test: usize,
    pub grid_points: usize,
    /// Draw the test sample without censoring. Scores then need no
    /// weights, and test samples no longer depend on the training
    /// censoring rate.
    pub uncensored_test: bool,
    pub train: TrainConfig,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            n_events: 3,
            censoring_dependence: 6,
            n_test: 5000,
            grid_points: DEFAULT_GRID_POINTS,
            uncensored_test: true,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub n: usize,
    pub censoring: f64,
    pub d: usize,
    pub seed: u64,
    pub ibs: f64,
    pub fit_seconds: f64,
}

pub const MODEL_MULTIINCIDENCE: &str = "multiincidence";
pub const MODEL_AALEN_JOHANSEN: &str = "aalen-johansen";
pub const MODEL_ORACLE: &str = "oracle";

/// Training and test samples of one cell.
pub struct CellData {
    pub train: SynthOutput,
    pub test: SynthOutput,
    pub config: SynthConfig,
}

pub fn simulate_cell(cell: &BenchCell, settings: &BenchSettings) -> Result<CellData> {
    let config = SynthConfig::standard(
        cell.n,
        settings.n_events,
        cell.d,
        settings.censoring_dependence.min(cell.d),
        cell.censoring,
        cell.seed,
    );
    let train = generate(&config)?;
    let test_config = SynthConfig {
        n_samples: settings.n_test,
        seed: cell.seed.wrapping_add(TEST_SEED_OFFSET),
        target_censoring_rate: if settings.uncensored_test {
            0.0
        } else {
            config.target_censoring_rate
        },
        censoring_multiplier: train.censoring_multiplier,
        ..config.clone()
    };
    let test = generate(&test_config)?;
    Ok(CellData {
        train,
        test,
        config,
    })
}

/// Scores the three predictors of one cell. Without an explicit `grid`
/// the default IBS grid of the test sample is used.
pub fn run_cell(cell: &BenchCell, settings: &BenchSettings, grid: Option<&TimeGrid>) -> Result<Vec<BenchRow>> {
    let data = simulate_cell(cell, settings)?;
    let grid = match grid {
        Some(g) => g.clone(),
        None => default_ibs_grid(&data.test.dataset, settings.grid_points)?,
    };
    let test = &data.test.dataset;
    let censoring = &data.test.censoring;
    let clip = DEFAULT_CLIP_FLOOR;
    let row = |model: &str, ibs: f64, fit_seconds: f64| BenchRow {
        model: model.to_string(),
        n: cell.n,
        censoring: cell.censoring,
        d: cell.d,
        seed: cell.seed,
        ibs,
        fit_seconds,
    };

    let started = Instant::now();
    let model = fit(&data.train.dataset, &settings.train)?;
    let model_seconds = started.elapsed().as_secs_f64();
    let model_ibs = integrated_brier_of(&model, test, &grid, censoring, clip)?.average;

    let started = Instant::now();
    let aj = aalen_johansen(&data.train.dataset);
    let aj_seconds = started.elapsed().as_secs_f64();
    let aj_ibs = integrated_brier_of(&aj, test, &grid, censoring, clip)?.average;

    let oracle_ibs = integrated_brier_of(&data.test.oracle, test, &grid, censoring, clip)?.average;

    Ok(vec![
        row(MODEL_MULTIINCIDENCE, model_ibs, model_seconds),
        row(MODEL_AALEN_JOHANSEN, aj_ibs, aj_seconds),
        row(MODEL_ORACLE, oracle_ibs, 0.0),
    ])
}

/// Censoring sweep for one seed. All rates share one grid, taken from the
/// most censored test sample (the shortest observed support when the test
/// sample is censored); the latent draws are identical across rates.
pub fn censoring_sweep(
    n: usize,
    d: usize,
    rates: &[f64],
    seed: u64,
    settings: &BenchSettings,
) -> Result<Vec<BenchRow>> {
    let worst = rates
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !worst.is_finite() {
        return Err(Error::InvalidArgument("no censoring rates given".into()));
    }
    let reference = simulate_cell(
        &BenchCell {
            n,
            censoring: worst,
            d,
            seed,
        },
        settings,
    )?;
    let grid = default_ibs_grid(&reference.test.dataset, settings.grid_points)?;
    let mut rows = Vec::new();
    for &censoring in rates {
        let cell = BenchCell { n, censoring, d, seed };
        rows.extend(run_cell(&cell, settings, Some(&grid))?);
    }
    Ok(rows)
}

pub fn write_rows<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<benchmark csv>", e))?;
    Ok(())
}

/// Mean IBS per model across rows.
pub fn mean_ibs(rows: &[BenchRow], model: &str) -> Option<f64> {
    let values: Vec<f64> = rows.iter().filter(|r| r.model == model).map(|r| r.ibs).collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_order() {
        let rows = vec![BenchRow {
            model: "oracle".into(),
            n: 10,
            censoring: 0.5,
            d: 3,
            seed: 1,
            ibs: 0.1,
            fit_seconds: 0.0,
        }];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "model,n,censoring,d,seed,ibs,fit_seconds");
        assert_eq!(mean_ibs(&rows, "oracle"), Some(0.1));
        assert_eq!(mean_ibs(&rows, "other"), None);
    }
}
