//! Covariate-free estimators: Kaplan–Meier, Aalen–Johansen and the
//! inverse-probability-of-censoring weights built on them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::prediction::{IncidencePredictor, IncidenceVector};

/// Default lower bound applied to censoring survival before inversion.
pub const DEFAULT_CLIP_FLOOR: f64 = 1e-12;

/// Right-continuous step function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    times: Vec<f64>,
    values: Vec<f64>,
    value_at_zero: f64,
}

impl StepCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>, value_at_zero: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} step times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || times.first().is_some_and(|&t| !(t > 0.0))
        {
            return Err(Error::InvalidArgument(
                "step times must be positive and strictly increasing".into(),
            ));
        }
        Ok(Self {
            times,
            values,
            value_at_zero,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            times: Vec::new(),
            values: Vec::new(),
            value_at_zero: value,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at_zero(&self) -> f64 {
        self.value_at_zero
    }

    /// Value at the largest stored time `<= t`.
    pub fn value(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => self.value_at_zero,
            i => self.values[i - 1],
        }
    }

    /// Left limit: value at the largest stored time `< t`.
    pub fn left_limit(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s < t) {
            0 => self.value_at_zero,
            i => self.values[i - 1],
        }
    }

    /// `time,value` rows, starting with the value at time zero.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,value")?;
        writeln!(out, "0,{}", self.value_at_zero)?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(out, "{t},{v}")?;
        }
        Ok(())
    }
}

/// Product-limit estimate of `P(T > t)`. Rows sharing a timestamp are all
/// at risk at that time, so observed events there count before censorings.
pub fn kaplan_meier(durations: &[f64], observed: &[bool]) -> StepCurve {
    assert_eq!(durations.len(), observed.len(), "length mismatch");
    assert!(!durations.is_empty(), "empty sample");
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| durations[a].total_cmp(&durations[b]));

    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut at_risk = durations.len();
    let mut surv = 1.0;
    let mut i = 0;
    while i < order.len() {
        let u = durations[order[i]];
        let mut leaving = 0;
        let mut deaths = 0;
        while i < order.len() && durations[order[i]] == u {
            leaving += 1;
            deaths += usize::from(observed[order[i]]);
            i += 1;
        }
        if deaths > 0 {
            surv = surv * (at_risk - deaths) as f64 / at_risk as f64;
            times.push(u);
            values.push(surv);
        }
        at_risk -= leaving;
    }
    StepCurve {
        times,
        values,
        value_at_zero: 1.0,
    }
}

/// Kaplan–Meier estimate of the censoring survival `P(C > t)`: censored
/// rows are the events of this sub-problem.
pub fn censoring_km(dataset: &SurvivalDataset) -> StepCurve {
    let flipped: Vec<bool> = dataset.events().iter().map(|&e| e == 0).collect();
    kaplan_meier(dataset.durations(), &flipped)
}

/// Any-event Kaplan–Meier survival.
pub fn event_km(dataset: &SurvivalDataset) -> StepCurve {
    let observed: Vec<bool> = dataset.events().iter().map(|&e| e != 0).collect();
    kaplan_meier(dataset.durations(), &observed)
}

/// Aalen–Johansen cumulative incidence curves plus `1 − Σ CIF`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AalenJohansen {
    pub cifs: Vec<StepCurve>,
    pub survival: StepCurve,
}

pub fn aalen_johansen(dataset: &SurvivalDataset) -> AalenJohansen {
    let k = dataset.n_events();
    let durations = dataset.durations();
    let events = dataset.events();
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| durations[a].total_cmp(&durations[b]));

    let mut times = Vec::new();
    let mut cif_values: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut surv_values = Vec::new();
    let mut cif = vec![0.0; k];
    let mut at_risk = durations.len();
    let mut surv_before = 1.0;
    let mut counts = vec![0usize; k + 1];
    let mut i = 0;
    while i < order.len() {
        let u = durations[order[i]];
        counts.iter_mut().for_each(|c| *c = 0);
        let mut leaving = 0;
        while i < order.len() && durations[order[i]] == u {
            counts[events[order[i]]] += 1;
            leaving += 1;
            i += 1;
        }
        let deaths: usize = counts[1..].iter().sum();
        if deaths > 0 {
            let n = at_risk as f64;
            for (c, &d) in cif.iter_mut().zip(&counts[1..]) {
                *c += surv_before * d as f64 / n;
            }
            surv_before = surv_before * (at_risk - deaths) as f64 / n;
            times.push(u);
            for (vals, &c) in cif_values.iter_mut().zip(&cif) {
                vals.push(c);
            }
            surv_values.push(1.0 - cif.iter().sum::<f64>());
        }
        at_risk -= leaving;
    }
    AalenJohansen {
        cifs: cif_values
            .into_iter()
            .map(|values| StepCurve {
                times: times.clone(),
                values,
                value_at_zero: 0.0,
            })
            .collect(),
        survival: StepCurve {
            times,
            values: surv_values,
            value_at_zero: 1.0,
        },
    }
}

impl IncidencePredictor for AalenJohansen {
    fn n_events(&self) -> usize {
        self.cifs.len()
    }

    /// Covariates are ignored; the curves are flat past the last event time.
    fn predict(&self, _row: &[f64], horizon: f64) -> IncidenceVector {
        let mut probs = Vec::with_capacity(self.cifs.len() + 1);
        probs.push(self.survival.value(horizon));
        probs.extend(self.cifs.iter().map(|c| c.value(horizon)));
        IncidenceVector::from_probs(probs)
    }
}

/// Censoring survival `G(t | x)` for a dataset row.
pub trait CensoringSurvival: Sync {
    /// `P(C > t | x_row)`.
    fn survival(&self, row: usize, t: f64) -> f64;
    /// Left limit `P(C >= t | x_row)`.
    fn survival_before(&self, row: usize, t: f64) -> f64;
}

impl CensoringSurvival for StepCurve {
    fn survival(&self, _row: usize, t: f64) -> f64 {
        self.value(t)
    }

    fn survival_before(&self, _row: usize, t: f64) -> f64 {
        self.left_limit(t)
    }
}

/// `1 / max(G(t−), clip_floor)`.
pub fn ipcw_weight(g: &StepCurve, t: f64, clip_floor: f64) -> f64 {
    1.0 / g.left_limit(t).max(clip_floor)
}

/// Row weight of the censoring-adjusted losses at horizon `horizon`:
/// `1/G(ζ)` while still at risk, `1/G(t−)` for an event before the
/// horizon, and zero for a row censored before the horizon.
#[inline]
pub fn horizon_weight(
    duration: f64,
    observed: bool,
    horizon: f64,
    g_at_horizon: impl FnOnce() -> f64,
    g_before_duration: impl FnOnce() -> f64,
    clip_floor: f64,
) -> f64 {
    if duration > horizon {
        1.0 / g_at_horizon().max(clip_floor)
    } else if observed {
        1.0 / g_before_duration().max(clip_floor)
    } else {
        0.0
    }
}
