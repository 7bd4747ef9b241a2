//! Survival datasets, CSV ingestion and time grids.
//!
//! A dataset holds one row per subject: a feature vector, the observed
//! duration `t = min(T*, C)` and the observed label `δ ∈ {0, …, K}` where
//! `0` marks a censored row.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    feature_names: Vec<String>,
    /// Row-major `n × d`.
    features: Vec<f64>,
    durations: Vec<f64>,
    events: Vec<usize>,
    n_events: usize,
}

impl SurvivalDataset {
    /// Builds a validated dataset. `n_events` is inferred as the largest
    /// label, but never below 1.
    pub fn new(
        feature_names: Vec<String>,
        features: Vec<f64>,
        durations: Vec<f64>,
        events: Vec<usize>,
    ) -> Result<Self> {
        let max_label = events.iter().copied().max().unwrap_or(0);
        Self::with_event_count(feature_names, features, durations, events, max_label.max(1))
    }

    /// Same as [`SurvivalDataset::new`] with an explicit event count, for
    /// samples where the highest-numbered event happens not to occur.
    pub fn with_event_count(
        feature_names: Vec<String>,
        features: Vec<f64>,
        durations: Vec<f64>,
        events: Vec<usize>,
        n_events: usize,
    ) -> Result<Self> {
        let n = durations.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if events.len() != n {
            return Err(Error::Shape(format!(
                "{} durations but {} event labels",
                n,
                events.len()
            )));
        }
        let d = feature_names.len();
        if features.len() != n * d {
            return Err(Error::Shape(format!(
                "expected {}×{} = {} feature values, got {}",
                n,
                d,
                n * d,
                features.len()
            )));
        }
        if n_events == 0 {
            return Err(Error::InvalidArgument("event count must be positive".into()));
        }
        for (row, &t) in durations.iter().enumerate() {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::NonPositiveDuration { row, value: t });
            }
        }
        for (row, &e) in events.iter().enumerate() {
            if e > n_events {
                return Err(Error::InvalidEvent {
                    row,
                    value: e.to_string(),
                });
            }
        }
        Ok(Self {
            feature_names,
            features,
            durations,
            events,
            n_events,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.durations.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// K, the number of competing events.
    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn events(&self) -> &[usize] {
        &self.events
    }

    pub fn duration(&self, i: usize) -> f64 {
        self.durations[i]
    }

    pub fn event(&self, i: usize) -> usize {
        self.events[i]
    }

    pub fn t_max(&self) -> f64 {
        self.durations.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn censoring_rate(&self) -> f64 {
        self.events.iter().filter(|&&e| e == 0).count() as f64 / self.n_rows() as f64
    }

    /// Keeps the rows selected by `keep`, preserving order.
    pub fn select(&self, keep: &[usize]) -> Result<Self> {
        let d = self.n_features();
        let mut features = Vec::with_capacity(keep.len() * d);
        for &i in keep {
            features.extend_from_slice(self.row(i));
        }
        Self::with_event_count(
            self.feature_names.clone(),
            features,
            keep.iter().map(|&i| self.durations[i]).collect(),
            keep.iter().map(|&i| self.events[i]).collect(),
            self.n_events,
        )
    }
}

/// Strictly increasing evaluation horizons within `[0, t_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizons: Vec<f64>,
    t_max: f64,
}

impl TimeGrid {
    pub fn new(horizons: Vec<f64>, t_max: f64) -> Result<Self> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "t_max must be positive and finite, got {t_max}"
            )));
        }
        if horizons.is_empty() {
            return Err(Error::InvalidArgument("time grid is empty".into()));
        }
        for w in horizons.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidArgument(
                    "time grid must be strictly increasing".into(),
                ));
            }
        }
        if horizons[0] < 0.0 || horizons[horizons.len() - 1] > t_max {
            return Err(Error::InvalidArgument(format!(
                "time grid must lie within [0, {t_max}]"
            )));
        }
        Ok(Self { horizons, t_max })
    }

    /// `points` equally spaced horizons from `start` to `end` inclusive.
    pub fn uniform(start: f64, end: f64, points: usize, t_max: f64) -> Result<Self> {
        if points == 0 {
            return Err(Error::InvalidArgument("grid needs at least one point".into()));
        }
        if points == 1 {
            return Self::new(vec![start], t_max);
        }
        let step = (end - start) / (points - 1) as f64;
        let mut horizons: Vec<f64> = (0..points).map(|i| start + step * i as f64).collect();
        horizons[points - 1] = end;
        Self::new(horizons, t_max)
    }

    pub fn horizons(&self) -> &[f64] {
        &self.horizons
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn len(&self) -> usize {
        self.horizons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.horizons.is_empty()
    }
}

/// Nearest-rank (type 1) empirical quantile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Horizons at the given quantiles of the observed event times (rows with
/// `δ ≠ 0`). Duplicate quantile values collapse to one horizon.
pub fn quantile_grid(dataset: &SurvivalDataset, quantiles: &[f64]) -> Result<TimeGrid> {
    if quantiles.is_empty() {
        return Err(Error::InvalidArgument("no quantiles given".into()));
    }
    for w in quantiles.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "quantiles must be strictly increasing".into(),
            ));
        }
    }
    if quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::InvalidArgument("quantiles must lie in (0, 1)".into()));
    }
    let mut times = event_times(dataset);
    if times.is_empty() {
        return Err(Error::NoEvents);
    }
    times.sort_by(f64::total_cmp);
    let mut horizons: Vec<f64> = quantiles.iter().map(|&q| nearest_rank(&times, q)).collect();
    horizons.dedup();
    TimeGrid::new(horizons, dataset.t_max())
}

pub(crate) fn event_times(dataset: &SurvivalDataset) -> Vec<f64> {
    dataset
        .durations()
        .iter()
        .zip(dataset.events())
        .filter(|(_, &e)| e != 0)
        .map(|(&t, _)| t)
        .collect()
}

/// Column names used by the command-line tools.
pub const DURATION_COLUMN: &str = "duration";
pub const EVENT_COLUMN: &str = "event";

/// Reads a dataset from a headered CSV. Every column other than the
/// duration and event columns is a numeric feature.
pub fn load_csv(
    path: impl AsRef<Path>,
    duration_column: &str,
    event_column: &str,
) -> Result<SurvivalDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, duration_column, event_column)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    duration_column: &str,
    event_column: &str,
) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let duration_idx = find(duration_column)?;
    let event_idx = find(event_column)?;
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != duration_idx && i != event_idx)
        .collect();
    let feature_names = feature_idx.iter().map(|&i| headers[i].to_string()).collect();

    let mut features = Vec::new();
    let mut durations = Vec::new();
    let mut events = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        for &i in &feature_idx {
            features.push(parse_real(cell(i), row, &headers[i])?);
        }
        let t = parse_real(cell(duration_idx), row, duration_column)?;
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::NonPositiveDuration { row, value: t });
        }
        durations.push(t);
        events.push(parse_label(cell(event_idx), row)?);
    }
    SurvivalDataset::new(feature_names, features, durations, events)
}

fn parse_real(s: &str, row: usize, column: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonNumeric {
            row,
            column: column.to_string(),
            value: s.to_string(),
        }),
    }
}

fn parse_label(s: &str, row: usize) -> Result<usize> {
    let invalid = || Error::InvalidEvent {
        row,
        value: s.to_string(),
    };
    if let Ok(v) = s.parse::<i64>() {
        return usize::try_from(v).map_err(|_| invalid());
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v.is_finite() => Ok(v as usize),
        _ => Err(invalid()),
    }
}

/// Feature columns of a headered CSV, skipping any column named in
/// `ignore`. Returns the names, the row-major values and the row count.
pub fn read_features<R: std::io::Read>(
    reader: R,
    ignore: &[&str],
) -> Result<(Vec<String>, Vec<f64>, usize)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let keep: Vec<usize> = (0..headers.len())
        .filter(|&i| !ignore.contains(&&headers[i]))
        .collect();
    let names: Vec<String> = keep.iter().map(|&i| headers[i].to_string()).collect();
    let mut values = Vec::new();
    let mut n_rows = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        n_rows += 1;
        for &i in &keep {
            let raw = record.get(i).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::NonNumeric {
                row,
                column: headers[i].to_string(),
                value: raw.to_string(),
            })?;
            values.push(v);
        }
    }
    Ok((names, values, n_rows))
}

/// Writes features, then `duration` and `event` columns under the given
/// names. Values use the shortest representation that parses back exactly.
pub fn save_csv(
    dataset: &SurvivalDataset,
    path: impl AsRef<Path>,
    duration_column: &str,
    event_column: &str,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, file, duration_column, event_column)
}

pub fn write_csv<W: Write>(
    dataset: &SurvivalDataset,
    writer: W,
    duration_column: &str,
    event_column: &str,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = dataset.feature_names().iter().map(String::as_str).collect();
    header.push(duration_column);
    header.push(event_column);
    wtr.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..dataset.n_rows() {
        record.clear();
        record.extend(dataset.row(i).iter().map(|v| v.to_string()));
        record.push(dataset.duration(i).to_string());
        record.push(dataset.event(i).to_string());
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    #[test]
    fn features_skip_outcome_columns() {
        let text = "a,duration,b,event\n1,2,3,0\n4,5,6,1\n";
        let (names, values, n) = super::read_features(text.as_bytes(), &["duration", "event"]).unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(values, vec![1.0, 3.0, 4.0, 6.0]);
        assert_eq!(n, 2);
        let (names, _, n) = super::read_features("a,b\n1,2\n".as_bytes(), &["duration", "event"]).unwrap();
        assert_eq!((names.len(), n), (2, 1));
    }

    use super::*;

    fn toy(durations: Vec<f64>, events: Vec<usize>) -> SurvivalDataset {
        let n = durations.len();
        SurvivalDataset::new(vec!["x".into()], vec![0.0; n], durations, events).unwrap()
    }

    #[test]
    fn reads_three_row_file() {
        let csv = "x,time,event\n0.5,1.0,1\n-1,2.0,0\n3,3.0,2\n";
        let ds = read_csv(csv.as_bytes(), "time", "event").unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_events(), 2);
        assert_eq!(ds.durations(), &[1.0, 2.0, 3.0]);
        assert_eq!(ds.events(), &[1, 0, 2]);
        assert_eq!(ds.row(1), &[-1.0]);
    }

    #[test]
    fn rejects_zero_duration() {
        let csv = "x,time,event\n0.5,1.0,1\n0.1,0.0,1\n";
        let err = read_csv(csv.as_bytes(), "time", "event").unwrap_err();
        assert!(err.to_string().contains("duration must be strictly positive"));
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn rejects_negative_label() {
        let csv = "x,time,event\n0.5,1.0,1\n0.1,2.0,-1\n";
        let err = read_csv(csv.as_bytes(), "time", "event").unwrap_err();
        assert!(matches!(err, Error::InvalidEvent { row: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_missing_column_and_text_cells() {
        let csv = "x,time,event\n0.5,1.0,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), "duration", "event"),
            Err(Error::MissingColumn(c)) if c == "duration"
        ));
        let csv = "x,time,event\nabc,1.0,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), "time", "event"),
            Err(Error::NonNumeric { row: 0, .. })
        ));
    }

    #[test]
    fn median_horizon() {
        let ds = toy(vec![1.0, 2.0, 3.0, 4.0], vec![1, 1, 1, 1]);
        let grid = quantile_grid(&ds, &[0.5]).unwrap();
        assert_eq!(grid.horizons(), &[2.0]);
        assert_eq!(grid.t_max(), 4.0);
    }

    #[test]
    fn all_censored_has_no_grid() {
        let ds = toy(vec![1.0, 2.0, 3.0, 4.0], vec![0, 0, 0, 0]);
        assert!(matches!(quantile_grid(&ds, &[0.5]), Err(Error::NoEvents)));
    }

    #[test]
    fn quartiles_of_one_to_hundred() {
        let durations: Vec<f64> = (1..=100).map(f64::from).collect();
        let ds = toy(durations, vec![1; 100]);
        let grid = quantile_grid(&ds, &[0.25, 0.5, 0.75]).unwrap();
        // Brute force: smallest value whose empirical CDF reaches q.
        let expected: Vec<f64> = [0.25, 0.5, 0.75]
            .iter()
            .map(|&q| {
                (1..=100)
                    .map(f64::from)
                    .find(|&v| (v / 100.0) >= q)
                    .unwrap()
            })
            .collect();
        assert_eq!(grid.horizons(), expected.as_slice());
        assert_eq!(expected, vec![25.0, 50.0, 75.0]);
    }

    #[test]
    fn uniform_grid_endpoints_are_exact() {
        let g = TimeGrid::uniform(0.1, 7.3, 100, 7.3).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g.horizons()[0], 0.1);
        assert_eq!(g.horizons()[99], 7.3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn csv_round_trip(
                rows in prop::collection::vec(
                    (-1e6f64..1e6, -1.0f64..1.0, 1e-6f64..1e4, 0usize..4), 1..40)
            ) {
                let features: Vec<f64> = rows.iter().flat_map(|r| [r.0, r.1]).collect();
                let ds = SurvivalDataset::with_event_count(
                    vec!["a".into(), "b".into()],
                    features,
                    rows.iter().map(|r| r.2).collect(),
                    rows.iter().map(|r| r.3).collect(),
                    3,
                ).unwrap();
                let mut buf = Vec::new();
                write_csv(&ds, &mut buf, "time", "event").unwrap();
                let back = read_csv(buf.as_slice(), "time", "event").unwrap();
                prop_assert_eq!(back.features(), ds.features());
                prop_assert_eq!(back.durations(), ds.durations());
                prop_assert_eq!(back.events(), ds.events());
            }

            #[test]
            fn quantile_grid_is_increasing_and_bounded(
                rows in prop::collection::vec((1e-3f64..100.0, 0usize..3), 1..60),
                qs in prop::collection::btree_set(1u32..99, 1..6)
            ) {
                let n = rows.len();
                let ds = SurvivalDataset::with_event_count(
                    vec![], vec![], rows.iter().map(|r| r.0).collect(),
                    rows.iter().map(|r| r.1).collect(), 2,
                ).unwrap();
                let quantiles: Vec<f64> = qs.iter().map(|&q| f64::from(q) / 100.0).collect();
                match quantile_grid(&ds, &quantiles) {
                    Ok(grid) => {
                        let h = grid.horizons();
                        prop_assert!(h.windows(2).all(|w| w[0] < w[1]));
                        let first_event = event_times(&ds).into_iter().fold(f64::MAX, f64::min);
                        prop_assert!(h[0] >= first_event);
                        prop_assert!(*h.last().unwrap() <= ds.t_max());
                    }
                    Err(Error::NoEvents) => prop_assert!(rows.iter().all(|r| r.1 == 0)),
                    Err(e) => prop_assert!(false, "unexpected error {e} for n={n}"),
                }
            }
        }
    }
}
