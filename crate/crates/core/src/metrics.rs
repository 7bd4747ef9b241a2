//! Censoring-aware evaluation metrics.
//!
//! Scores that need a censoring survival take a [`CensoringSurvival`]: the
//! marginal Kaplan–Meier of censoring for real data, or the true censoring
//! law on synthetic data.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{nearest_rank, SurvivalDataset, TimeGrid};
use crate::error::{Error, Result};
use crate::gbdt::LOG_FLOOR;
use crate::marginal::CensoringSurvival;
use crate::prediction::{IncidencePredictor, IncidenceVector, PredictionCube};
use crate::quadrature::{integrate, trapezoid};

/// Number of node intervals used by [`s_cen_log_simple`] by default.
pub const DEFAULT_NODE_COUNT: usize = 32;
/// Points in the default IBS grid.
pub const DEFAULT_GRID_POINTS: usize = 100;
/// Event-time quantile where the default IBS grid starts.
pub const GRID_START_QUANTILE: f64 = 0.001;

/// Censoring-adjusted Brier score of event `k` at `horizon`, where
/// `cif[i]` is the predicted `F̂_k(horizon | x_i)`.
pub fn brier_k(
    cif: &[f64],
    dataset: &SurvivalDataset,
    horizon: f64,
    k: usize,
    censoring: &dyn CensoringSurvival,
    clip_floor: f64,
) -> f64 {
    assert_eq!(cif.len(), dataset.n_rows());
    let mut total = 0.0;
    for (i, &f) in cif.iter().enumerate() {
        let t = dataset.duration(i);
        let e = dataset.event(i);
        total += if t > horizon {
            f * f / censoring.survival(i, horizon).max(clip_floor)
        } else if e == 0 {
            0.0
        } else {
            let residual = if e == k { 1.0 - f } else { f };
            residual * residual / censoring.survival_before(i, t).max(clip_floor)
        };
    }
    total / dataset.n_rows() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbsReport {
    /// Entry `k − 1` is the IBS of event `k`.
    pub per_event: Vec<f64>,
    pub average: f64,
}

/// Trapezoidal integral of each event's Brier score over the cube's
/// horizons, divided by the grid span.
pub fn integrated_brier(
    cube: &PredictionCube,
    dataset: &SurvivalDataset,
    censoring: &dyn CensoringSurvival,
    clip_floor: f64,
) -> Result<IbsReport> {
    let horizons = cube.horizons();
    if horizons.len() < 2 {
        return Err(Error::InvalidArgument(
            "the integrated Brier score needs at least two grid points".into(),
        ));
    }
    if cube.n_rows() != dataset.n_rows() {
        return Err(Error::Shape(format!(
            "{} prediction rows for {} dataset rows",
            cube.n_rows(),
            dataset.n_rows()
        )));
    }
    let span = horizons[horizons.len() - 1] - horizons[0];
    let per_event: Vec<f64> = (1..=cube.n_events())
        .map(|k| {
            let scores: Vec<f64> = horizons
                .iter()
                .enumerate()
                .map(|(h, &zeta)| brier_k(&cube.column(h, k), dataset, zeta, k, censoring, clip_floor))
                .collect();
            trapezoid(horizons, &scores) / span
        })
        .collect();
    let average = per_event.iter().sum::<f64>() / per_event.len() as f64;
    Ok(IbsReport { per_event, average })
}

/// [`integrated_brier`] for a predictor evaluated over `grid`.
pub fn integrated_brier_of<P: IncidencePredictor + ?Sized>(
    predictor: &P,
    dataset: &SurvivalDataset,
    grid: &TimeGrid,
    censoring: &dyn CensoringSurvival,
    clip_floor: f64,
) -> Result<IbsReport> {
    let cube = PredictionCube::from_predictor(predictor, dataset, grid.horizons());
    integrated_brier(&cube, dataset, censoring, clip_floor)
}

/// `points` uniform horizons from the 0.001 nearest-rank quantile of the
/// observed event times up to `t_max`.
pub fn default_ibs_grid(dataset: &SurvivalDataset, points: usize) -> Result<TimeGrid> {
    let mut times = crate::data::event_times(dataset);
    if times.is_empty() {
        return Err(Error::NoEvents);
    }
    times.sort_by(f64::total_cmp);
    let start = nearest_rank(&times, GRID_START_QUANTILE);
    let t_max = dataset.t_max();
    if points < 2 || !(start < t_max) {
        return Err(Error::InvalidArgument(format!(
            "cannot build a {points}-point grid on [{start}, {t_max}]"
        )));
    }
    TimeGrid::uniform(start, t_max, points, t_max)
}

/// IPCW-weighted multiclass log-loss at `horizon`, averaged over all rows.
pub fn weighted_logloss(
    predictions: &[IncidenceVector],
    dataset: &SurvivalDataset,
    horizon: f64,
    censoring: &dyn CensoringSurvival,
    clip_floor: f64,
) -> f64 {
    assert_eq!(predictions.len(), dataset.n_rows());
    let mut total = 0.0;
    for (i, p) in predictions.iter().enumerate() {
        let t = dataset.duration(i);
        let e = dataset.event(i);
        let (class, g) = if t > horizon {
            (0, censoring.survival(i, horizon))
        } else if e == 0 {
            continue;
        } else {
            (e, censoring.survival_before(i, t))
        };
        total -= p.probs()[class].max(LOG_FLOOR).ln() / g.max(clip_floor);
    }
    total / dataset.n_rows() as f64
}

/// Share of rows whose most probable class at `horizon` (lowest index on
/// ties) is the class observed there. Rows censored by `horizon` are
/// skipped.
pub fn accuracy_in_time(
    predictions: &[IncidenceVector],
    dataset: &SurvivalDataset,
    horizon: f64,
) -> Result<f64> {
    assert_eq!(predictions.len(), dataset.n_rows());
    let mut hits = 0usize;
    let mut evaluable = 0usize;
    for (i, p) in predictions.iter().enumerate() {
        let t = dataset.duration(i);
        let e = dataset.event(i);
        if e == 0 && t <= horizon {
            continue;
        }
        let observed = if t <= horizon { e } else { 0 };
        evaluable += 1;
        hits += usize::from(p.argmax() == observed);
    }
    if evaluable == 0 {
        return Err(Error::NoEvaluableRows);
    }
    Ok(hits as f64 / evaluable as f64)
}

/// Fenwick tree over score ranks.
struct Counts(Vec<u64>);

impl Counts {
    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks `< rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut total = 0;
        while i > 0 {
            total += self.0[i];
            i -= i & i.wrapping_neg();
        }
        total
    }
}

/// Time-dependent concordance of `scores` (predicted `F̂_k(ζ | x)`) for
/// event `k`. A pair `(i, j)` is comparable when `i` has event `k` at
/// `t_i ≤ ζ` and `t_j > t_i`; it is concordant when `i` scores higher, and
/// ties count one half.
pub fn c_index_at(scores: &[f64], dataset: &SurvivalDataset, horizon: f64, k: usize) -> Result<f64> {
    let n = dataset.n_rows();
    assert_eq!(scores.len(), n);
    let mut sorted_scores = scores.to_vec();
    sorted_scores.sort_by(f64::total_cmp);
    sorted_scores.dedup();
    let rank = |s: f64| sorted_scores.partition_point(|&v| v.total_cmp(&s).is_lt());

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dataset.duration(b).total_cmp(&dataset.duration(a)));

    let mut seen = Counts(vec![0; sorted_scores.len() + 1]);
    let mut inserted = 0u64;
    let mut pairs = 0u64;
    let mut twice_concordant = 0u64;
    let mut start = 0;
    while start < n {
        let t = dataset.duration(order[start]);
        let mut end = start;
        while end < n && dataset.duration(order[end]) == t {
            end += 1;
        }
        // Rows already inserted have strictly larger durations.
        for &i in &order[start..end] {
            if dataset.event(i) == k && t <= horizon {
                let r = rank(scores[i]);
                let lower = seen.below(r);
                let ties = seen.below(r + 1) - lower;
                pairs += inserted;
                twice_concordant += 2 * lower + ties;
            }
        }
        for &i in &order[start..end] {
            seen.add(rank(scores[i]));
        }
        inserted += (end - start) as u64;
        start = end;
    }
    if pairs == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(twice_concordant as f64 / (2 * pairs) as f64)
}

/// Equally spaced nodes `0, t_max/B, …, t_max`.
pub fn node_times(node_count: usize, t_max: f64) -> Vec<f64> {
    let step = t_max / node_count as f64;
    let mut nodes: Vec<f64> = (0..=node_count).map(|j| step * j as f64).collect();
    nodes[node_count] = t_max;
    nodes
}

/// Interval-censored log score on `B` equal node intervals. `cif` is
/// row-major `n × (B + 1)`: the any-event incidence `1 − Ŝ` at each node of
/// [`node_times`]. An event in `(ζ_j, ζ_{j+1}]` scores
/// `−log(F̂(ζ_{j+1}) − F̂(ζ_j))`; a censoring there scores
/// `−log(1 − F̂(ζ_{j+1}))`. Durations past `t_max` use the last interval.
pub fn s_cen_log_simple_from_nodes(
    cif: &[f64],
    dataset: &SurvivalDataset,
    node_count: usize,
    t_max: f64,
) -> Result<f64> {
    if node_count < 2 {
        return Err(Error::InvalidArgument("need at least two node intervals".into()));
    }
    let width = node_count + 1;
    if cif.len() != dataset.n_rows() * width {
        return Err(Error::Shape(format!(
            "{} node values for {} rows of {} nodes",
            cif.len(),
            dataset.n_rows(),
            width
        )));
    }
    let nodes = node_times(node_count, t_max);
    let mut total = 0.0;
    for i in 0..dataset.n_rows() {
        let t = dataset.duration(i);
        let j = nodes[1..].partition_point(|&z| z < t).min(node_count - 1);
        let f = &cif[i * width..(i + 1) * width];
        let mass = if dataset.event(i) != 0 {
            f[j + 1] - f[j]
        } else {
            1.0 - f[j + 1]
        };
        total -= mass.max(LOG_FLOOR).ln();
    }
    Ok(total / dataset.n_rows() as f64)
}

pub fn s_cen_log_simple<P: IncidencePredictor + ?Sized>(
    predictor: &P,
    dataset: &SurvivalDataset,
    node_count: usize,
    t_max: f64,
) -> Result<f64> {
    if node_count < 2 {
        return Err(Error::InvalidArgument("need at least two node intervals".into()));
    }
    let nodes = node_times(node_count, t_max);
    let cube = PredictionCube::from_predictor(predictor, dataset, &nodes);
    let mut cif = Vec::with_capacity(dataset.n_rows() * nodes.len());
    for i in 0..dataset.n_rows() {
        for h in 0..nodes.len() {
            cif.push(1.0 - cube.get(i, h)[0]);
        }
    }
    s_cen_log_simple_from_nodes(&cif, dataset, node_count, t_max)
}

/// Brute-force minimizer of the expected weighted log-loss at `horizon`.
///
/// Outcomes follow `oracle` (index 0 = still event-free at `horizon`),
/// event times are uniform on `(0, horizon]` and independent of the
/// censoring time, whose survival is `true_censoring`; the loss weights use
/// `assumed_censoring`. Every point of the simplex grid with spacing `step`
/// is scored and the first minimizer is returned.
pub fn properness_probe(
    oracle: &[f64],
    true_censoring: impl Fn(f64) -> f64,
    assumed_censoring: impl Fn(f64) -> f64,
    horizon: f64,
    step: f64,
) -> Vec<f64> {
    assert!(step > 0.0 && step <= 0.1, "grid step must lie in (0, 0.1]");
    assert!(oracle.len() >= 2);
    let event_ratio = integrate(
        |u| true_censoring(u) / assumed_censoring(u),
        0.0,
        horizon,
        1e-12,
    ) / horizon;
    let masses: Vec<f64> = oracle
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            if c == 0 {
                p * true_censoring(horizon) / assumed_censoring(horizon)
            } else {
                p * event_ratio
            }
        })
        .collect();

    let units = (1.0 / step).round() as usize;
    let classes = oracle.len();
    let mut counts = vec![0usize; classes];
    let mut best = (f64::INFINITY, vec![0.0; classes]);
    enumerate_simplex(&mut counts, 0, units, &mut |c| {
        let loss: f64 = c
            .iter()
            .zip(&masses)
            .map(|(&n, &m)| {
                if m == 0.0 {
                    0.0
                } else {
                    -m * (n as f64 / units as f64).max(LOG_FLOOR).ln()
                }
            })
            .sum();
        if loss < best.0 {
            best = (loss, c.iter().map(|&n| n as f64 / units as f64).collect());
        }
    });
    best.1
}

fn enumerate_simplex(counts: &mut [usize], at: usize, remaining: usize, visit: &mut dyn FnMut(&[usize])) {
    if at == counts.len() - 1 {
        counts[at] = remaining;
        visit(counts);
        return;
    }
    for n in 0..=remaining {
        counts[at] = n;
        enumerate_simplex(counts, at + 1, remaining - n, visit);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonValue {
    pub horizon: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventHorizonValue {
    pub event: usize,
    pub horizon: f64,
    /// `None` when no pair is comparable at this horizon.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ibs_per_event: Vec<f64>,
    pub ibs: f64,
    pub accuracy: Vec<HorizonValue>,
    pub c_index: Vec<EventHorizonValue>,
    /// Absent when the predictions do not cover the node grid.
    pub s_cen_log_simple: Option<f64>,
    /// Mean over the accuracy horizons.
    pub weighted_logloss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_ibs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_ibs_delta: Option<f64>,
    /// Share of sampled `(row, ζ < ζ′, k)` with `F_k(ζ) <= F_k(ζ′) + 0.05`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cif_monotonicity: Option<f64>,
}

impl MetricReport {
    pub fn with_oracle_ibs(mut self, oracle_ibs: f64) -> Self {
        self.oracle_ibs = Some(oracle_ibs);
        self.oracle_ibs_delta = Some(self.ibs - oracle_ibs);
        self
    }

    /// Long-format CSV with columns `metric,event,horizon,value`; blank
    /// cells mark fields that do not apply.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "event", "horizon", "value"])?;
        let mut row = |metric: &str, event: Option<usize>, horizon: Option<f64>, value: f64| {
            w.write_record([
                metric.to_string(),
                event.map(|e| e.to_string()).unwrap_or_default(),
                horizon.map(|h| h.to_string()).unwrap_or_default(),
                value.to_string(),
            ])
        };
        for (k, &v) in self.ibs_per_event.iter().enumerate() {
            row("ibs", Some(k + 1), None, v)?;
        }
        row("ibs", None, None, self.ibs)?;
        for a in &self.accuracy {
            row("accuracy", None, Some(a.horizon), a.value)?;
        }
        for c in &self.c_index {
            if let Some(v) = c.value {
                row("c_index", Some(c.event), Some(c.horizon), v)?;
            }
        }
        if let Some(v) = self.s_cen_log_simple {
            row("s_cen_log_simple", None, None, v)?;
        }
        row("weighted_logloss", None, None, self.weighted_logloss)?;
        if let Some(v) = self.oracle_ibs {
            row("oracle_ibs", None, None, v)?;
        }
        if let Some(v) = self.oracle_ibs_delta {
            row("oracle_ibs_delta", None, None, v)?;
        }
        if let Some(v) = self.cif_monotonicity {
            row("cif_monotonicity", None, None, v)?;
        }
        w.flush().map_err(|e| Error::io("<metrics csv>", e))?;
        Ok(())
    }
}

/// Grids and constants shared by [`evaluate`] and [`evaluate_cube`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub grid: TimeGrid,
    /// Horizons for accuracy, C-index and weighted log-loss.
    pub horizons: Vec<f64>,
    pub node_count: usize,
    pub clip_floor: f64,
}

fn pointwise_metrics(
    cube: &PredictionCube,
    dataset: &SurvivalDataset,
    censoring: &dyn CensoringSurvival,
    clip_floor: f64,
) -> Result<(Vec<HorizonValue>, Vec<EventHorizonValue>, f64)> {
    let mut accuracy = Vec::new();
    let mut c_index = Vec::new();
    let mut logloss = 0.0;
    for (h, &zeta) in cube.horizons().iter().enumerate() {
        let preds = cube.at_horizon(h);
        accuracy.push(HorizonValue {
            horizon: zeta,
            value: accuracy_in_time(&preds, dataset, zeta)?,
        });
        logloss += weighted_logloss(&preds, dataset, zeta, censoring, clip_floor);
        for k in 1..=cube.n_events() {
            let value = match c_index_at(&cube.column(h, k), dataset, zeta, k) {
                Ok(v) => Some(v),
                Err(Error::NoComparablePairs) => None,
                Err(e) => return Err(e),
            };
            c_index.push(EventHorizonValue {
                event: k,
                horizon: zeta,
                value,
            });
        }
    }
    Ok((accuracy, c_index, logloss / cube.horizons().len() as f64))
}

/// Full report for a predictor.
pub fn evaluate<P: IncidencePredictor + ?Sized>(
    predictor: &P,
    dataset: &SurvivalDataset,
    settings: &EvalSettings,
    censoring: &dyn CensoringSurvival,
) -> Result<MetricReport> {
    if settings.horizons.is_empty() {
        return Err(Error::InvalidArgument("no evaluation horizons".into()));
    }
    let ibs = integrated_brier_of(predictor, dataset, &settings.grid, censoring, settings.clip_floor)?;
    let at = PredictionCube::from_predictor(predictor, dataset, &settings.horizons);
    let (accuracy, c_index, weighted_logloss) =
        pointwise_metrics(&at, dataset, censoring, settings.clip_floor)?;
    let s_cen = s_cen_log_simple(predictor, dataset, settings.node_count, settings.grid.t_max())?;
    Ok(MetricReport {
        ibs_per_event: ibs.per_event,
        ibs: ibs.average,
        accuracy,
        c_index,
        s_cen_log_simple: Some(s_cen),
        weighted_logloss,
        oracle_ibs: None,
        oracle_ibs_delta: None,
        cif_monotonicity: None,
    })
}

/// Report from precomputed predictions: the cube's horizons serve both as
/// the IBS grid and as the pointwise horizons.
pub fn evaluate_cube(
    cube: &PredictionCube,
    dataset: &SurvivalDataset,
    censoring: &dyn CensoringSurvival,
    clip_floor: f64,
) -> Result<MetricReport> {
    let ibs = integrated_brier(cube, dataset, censoring, clip_floor)?;
    let (accuracy, c_index, weighted_logloss) = pointwise_metrics(cube, dataset, censoring, clip_floor)?;
    Ok(MetricReport {
        ibs_per_event: ibs.per_event,
        ibs: ibs.average,
        accuracy,
        c_index,
        s_cen_log_simple: None,
        weighted_logloss,
        oracle_ibs: None,
        oracle_ibs_delta: None,
        cif_monotonicity: None,
    })
}
