//! The MultiIncidence estimator.
//!
//! A multiclass booster predicts `(S, F₁, …, F_K)` at a horizon `ζ` that is
//! fed to the trees as an extra input column. Every boosting round draws a
//! fresh horizon per row, turns `(t, δ)` into the class observed at that
//! horizon, and weights the row by the inverse probability of remaining
//! uncensored. A second, binary booster models the censoring survival
//! `G(ζ | x)`; after a warm-up on marginal weights it is refitted once per
//! round using the event model's survival as its own censoring weights.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SurvivalDataset, TimeGrid};
use crate::error::{Error, Result};
use crate::gbdt::{
    fit_bins, softmax_in_place, BinMapper, BinnedMatrix, BoostedEnsemble, FeatureBins, TreeParams,
    MAX_BINS,
};
use crate::marginal::{
    censoring_km, event_km, horizon_weight, CensoringSurvival, DEFAULT_CLIP_FLOOR,
};
use crate::prediction::{IncidencePredictor, IncidenceVector};

/// Version written into serialized models; newer documents are rejected.
pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "multiincidence-model";

const LAMBDA: f64 = 1.0;
const MIN_CHILD_HESS: f64 = 1e-3;
const MIN_DATA_IN_LEAF: usize = 20;
/// Per-round cap on leaf values. Inverse-probability weights reach the
/// thousands in the tail of the time axis; without a cap a single heavy,
/// badly predicted row can push the scores far enough to corrupt the next
/// round's weights, and the feedback loop then amplifies it.
const MAX_LEAF_STEP: f64 = 5.0;

/// Source of the censoring survival used to weight the event model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CensoringWeights {
    /// The covariate-dependent censoring booster (warm-up plus feedback loop).
    #[default]
    Feedback,
    /// The marginal Kaplan–Meier of censoring, ignoring covariates.
    MarginalKm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub n_iter: usize,
    pub max_depth: usize,
    /// Horizons drawn per row per round; each draw is a separate training row.
    pub n_time_samples: usize,
    /// Censoring-model rounds fitted before the first event round.
    pub n_censoring_warmup: usize,
    pub clip_floor: f64,
    pub seed: u64,
    #[serde(default)]
    pub censoring_weights: CensoringWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            n_iter: 100,
            max_depth: 5,
            n_time_samples: 2,
            n_censoring_warmup: 20,
            clip_floor: DEFAULT_CLIP_FLOOR,
            seed: 0,
            censoring_weights: CensoringWeights::Feedback,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning rate must lie in (0, 1], got {}", self.learning_rate));
        }
        if self.n_iter == 0 {
            return bad("n_iter must be positive".into());
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive".into());
        }
        if self.n_time_samples == 0 {
            return bad("n_time_samples must be at least 1".into());
        }
        if !(self.clip_floor > 0.0 && self.clip_floor < 1.0) {
            return bad(format!("clip floor must lie in (0, 1), got {}", self.clip_floor));
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            lambda: LAMBDA,
            min_child_hess: MIN_CHILD_HESS,
            min_data_in_leaf: MIN_DATA_IN_LEAF,
            max_leaf_step: Some(MAX_LEAF_STEP),
        }
    }
}

/// Training-procedure switches that do not change the fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FitOptions {
    /// Pass only rows with positive weight to each boosting round.
    pub drop_zero_weight_rows: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiIncidenceModel {
    event_ensemble: BoostedEnsemble,
    censoring_ensemble: BoostedEnsemble,
    t_max: f64,
    n_events: usize,
    n_features: usize,
    config: TrainConfig,
}

/// Class observed at horizon `ζ`: the event label if it happened by then,
/// otherwise 0.
#[inline]
pub fn target_at(duration: f64, event: usize, horizon: f64) -> usize {
    if duration <= horizon {
        event
    } else {
        0
    }
}

/// Targets for one horizon per row; `horizons.len()` may be any multiple of
/// the row count, replicate `j` of row `i` sitting at `j·n + i`.
pub fn make_targets(dataset: &SurvivalDataset, horizons: &[f64]) -> Vec<usize> {
    let n = dataset.n_rows();
    assert_eq!(horizons.len() % n, 0, "horizons must replicate the rows");
    horizons
        .iter()
        .enumerate()
        .map(|(s, &h)| target_at(dataset.duration(s % n), dataset.event(s % n), h))
        .collect()
}

/// IPCW weights for the event model given a censoring survival `G(· | x)`.
pub fn make_weights(
    dataset: &SurvivalDataset,
    horizons: &[f64],
    censoring: &dyn CensoringSurvival,
    clip_floor: f64,
) -> Vec<f64> {
    let n = dataset.n_rows();
    assert_eq!(horizons.len() % n, 0, "horizons must replicate the rows");
    horizons
        .iter()
        .enumerate()
        .map(|(s, &h)| {
            let i = s % n;
            horizon_weight(
                dataset.duration(i),
                dataset.event(i) != 0,
                h,
                || censoring.survival(i, h),
                || censoring.survival_before(i, dataset.duration(i)),
                clip_floor,
            )
        })
        .collect()
}

/// Horizons in `(0, t_max]`.
fn draw_horizons(rng: &mut ChaCha8Rng, count: usize, t_max: f64) -> Vec<f64> {
    (0..count)
        .map(|_| t_max * (1.0 - rng.random::<f64>()))
        .collect()
}

/// Feature bins replicated `reps` times with the horizon column appended.
fn stack(features: &BinnedMatrix, reps: usize, time_bins: Vec<u8>) -> BinnedMatrix {
    let n = features.n_rows();
    assert_eq!(time_bins.len(), n * reps);
    let mut columns: Vec<Vec<u8>> = (0..features.n_features())
        .map(|j| features.column(j).repeat(reps))
        .collect();
    columns.push(time_bins);
    BinnedMatrix::from_columns(n * reps, columns)
}

fn class_probability(raw: &[f64], n_classes: usize, class: usize) -> Vec<f64> {
    let mut buf = vec![0.0; n_classes];
    raw.chunks(n_classes)
        .map(|r| {
            buf.copy_from_slice(r);
            softmax_in_place(&mut buf);
            buf[class]
        })
        .collect()
}

fn training_rows(weights: &[f64], drop_zero: bool) -> Vec<u32> {
    (0..weights.len() as u32)
        .filter(|&r| !drop_zero || weights[r as usize] > 0.0)
        .collect()
}

/// Targets and weights of the censoring model at each stacked row: class 1
/// when censored by the horizon, 0 while still under observation; rows whose
/// event came first carry no information on `C` and get weight 0. The
/// any-event survival plays the role that `G` plays for the event model.
fn censoring_targets_weights(
    dataset: &SurvivalDataset,
    horizons: &[f64],
    surv_at_horizon: &[f64],
    surv_at_duration: &[f64],
    clip_floor: f64,
) -> (Vec<usize>, Vec<f64>) {
    let n = dataset.n_rows();
    horizons
        .iter()
        .enumerate()
        .map(|(s, &h)| {
            let i = s % n;
            let (t, censored) = (dataset.duration(i), dataset.event(i) == 0);
            let target = usize::from(t <= h && censored);
            let w = horizon_weight(
                t,
                censored,
                h,
                || surv_at_horizon[s],
                || surv_at_duration[i],
                clip_floor,
            );
            (target, w)
        })
        .unzip()
}

fn event_weights(
    dataset: &SurvivalDataset,
    horizons: &[f64],
    g_at_horizon: &[f64],
    g_at_duration: &[f64],
    clip_floor: f64,
) -> Vec<f64> {
    let n = dataset.n_rows();
    horizons
        .iter()
        .enumerate()
        .map(|(s, &h)| {
            let i = s % n;
            horizon_weight(
                dataset.duration(i),
                dataset.event(i) != 0,
                h,
                || g_at_horizon[s],
                || g_at_duration[i],
                clip_floor,
            )
        })
        .collect()
}

pub fn fit(dataset: &SurvivalDataset, config: &TrainConfig) -> Result<MultiIncidenceModel> {
    fit_with(dataset, config, FitOptions::default())
}

pub fn fit_with(
    dataset: &SurvivalDataset,
    config: &TrainConfig,
    options: FitOptions,
) -> Result<MultiIncidenceModel> {
    config.validate()?;
    let n = dataset.n_rows();
    let d = dataset.n_features();
    let k = dataset.n_events();
    let t_max = dataset.t_max();
    let clip = config.clip_floor;
    let reps = config.n_time_samples;
    let params = config.tree_params();

    let feature_mapper = fit_bins(dataset.features(), n, d);
    let features = feature_mapper.transform(dataset.features(), n);
    let time_bins = FeatureBins::uniform(0.0, t_max, MAX_BINS);
    let mut mapper = feature_mapper;
    mapper.push(time_bins.clone());
    let bin_times = |times: &[f64]| -> Vec<u8> { times.iter().map(|&t| time_bins.bin(t)).collect() };

    let mut event = BoostedEnsemble::new(k + 1, config.learning_rate, mapper.clone());
    let mut censoring = BoostedEnsemble::new(2, config.learning_rate, mapper);
    let at_duration = stack(&features, 1, bin_times(dataset.durations()));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let event_surv = event_km(dataset);

    for round in 0..config.n_censoring_warmup {
        let horizons = draw_horizons(&mut rng, n * reps, t_max);
        let data = stack(&features, reps, bin_times(&horizons));
        let s_h: Vec<f64> = horizons.iter().map(|&h| event_surv.value(h)).collect();
        let s_t: Vec<f64> = dataset.durations().iter().map(|&t| event_surv.left_limit(t)).collect();
        let (targets, weights) = censoring_targets_weights(dataset, &horizons, &s_h, &s_t, clip);
        if round == 0 {
            censoring.init_base_scores(&targets, &weights);
        }
        let raw = censoring.raw_scores(&data);
        let rows = training_rows(&weights, options.drop_zero_weight_rows);
        let loss = censoring.boost_round(&data, &rows, &raw, &targets, &weights, &params);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                round,
                model: "censoring",
            });
        }
    }

    let censoring_km = censoring_km(dataset);
    let mut censoring_at_t = censoring.raw_scores(&at_duration);
    let mut event_at_t: Vec<f64> = Vec::new();

    for round in 0..config.n_iter {
        let horizons = draw_horizons(&mut rng, n * reps, t_max);
        let data = stack(&features, reps, bin_times(&horizons));
        let censoring_raw = censoring.raw_scores(&data);

        let (g_h, g_t) = match config.censoring_weights {
            CensoringWeights::Feedback => (
                class_probability(&censoring_raw, 2, 0),
                class_probability(&censoring_at_t, 2, 0),
            ),
            CensoringWeights::MarginalKm => (
                horizons.iter().map(|&h| censoring_km.value(h)).collect(),
                dataset
                    .durations()
                    .iter()
                    .map(|&t| censoring_km.left_limit(t))
                    .collect(),
            ),
        };
        let targets = make_targets(dataset, &horizons);
        let weights = event_weights(dataset, &horizons, &g_h, &g_t, clip);
        if round == 0 {
            event.init_base_scores(&targets, &weights);
            event_at_t = event.raw_scores(&at_duration);
        }

        let mut event_raw = event.raw_scores(&data);
        let rows = training_rows(&weights, options.drop_zero_weight_rows);
        let loss = event.boost_round(&data, &rows, &event_raw, &targets, &weights, &params);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                round,
                model: "event",
            });
        }
        let last = event.n_rounds() - 1;
        event.add_rounds(last, &data, &mut event_raw);
        event.add_rounds(last, &at_duration, &mut event_at_t);

        // Feedback: refit the censoring model against the updated survival.
        let s_h = class_probability(&event_raw, k + 1, 0);
        let s_t = class_probability(&event_at_t, k + 1, 0);
        let (c_targets, c_weights) = censoring_targets_weights(dataset, &horizons, &s_h, &s_t, clip);
        if config.n_censoring_warmup == 0 && round == 0 {
            censoring.init_base_scores(&c_targets, &c_weights);
        }
        let rows = training_rows(&c_weights, options.drop_zero_weight_rows);
        let censoring_raw = if config.n_censoring_warmup == 0 && round == 0 {
            censoring.raw_scores(&data)
        } else {
            censoring_raw
        };
        let loss = censoring.boost_round(&data, &rows, &censoring_raw, &c_targets, &c_weights, &params);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                round,
                model: "censoring",
            });
        }
        let last = censoring.n_rounds() - 1;
        censoring.add_rounds(last, &at_duration, &mut censoring_at_t);
    }

    Ok(MultiIncidenceModel {
        event_ensemble: event,
        censoring_ensemble: censoring,
        t_max,
        n_events: k,
        n_features: d,
        config: config.clone(),
    })
}

#[derive(Serialize, Deserialize)]
struct ModelDocument<M> {
    format: String,
    version: u32,
    model: M,
}

impl MultiIncidenceModel {
    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn event_ensemble(&self) -> &BoostedEnsemble {
        &self.event_ensemble
    }

    pub fn censoring_ensemble(&self) -> &BoostedEnsemble {
        &self.censoring_ensemble
    }

    fn mapper(&self) -> &BinMapper {
        self.event_ensemble.bin_mapper()
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_features {
            return Err(Error::FeatureCount {
                expected: self.n_features,
                got: row.len(),
            });
        }
        Ok(())
    }

    fn bin_features(&self, row: &[f64]) -> Vec<u8> {
        let mut bins: Vec<u8> = (0..self.n_features)
            .map(|j| self.mapper().feature(j).bin(row[j]))
            .collect();
        bins.push(0);
        bins
    }

    fn time_bin(&self, horizon: f64) -> u8 {
        self.mapper()
            .feature(self.n_features)
            .bin(horizon.min(self.t_max))
    }

    fn incidence_from_bins(&self, bins: &[u8]) -> IncidenceVector {
        let mut raw = vec![0.0; self.n_events + 1];
        self.event_ensemble.raw_into(|j| bins[j], &mut raw);
        softmax_in_place(&mut raw);
        IncidenceVector::from_probs(raw)
    }

    /// `(S, F₁, …, F_K)` at `horizon`. Horizons past `t_max` are clamped;
    /// at `ζ <= 0` the exact vector `(1, 0, …, 0)` is returned.
    pub fn predict_incidence(&self, row: &[f64], horizon: f64) -> Result<IncidenceVector> {
        self.check_row(row)?;
        if !horizon.is_finite() && horizon != f64::INFINITY {
            return Err(Error::InvalidArgument(format!("horizon must be a number, got {horizon}")));
        }
        if horizon <= 0.0 {
            return Ok(IncidenceVector::at_origin(self.n_events));
        }
        let mut bins = self.bin_features(row);
        bins[self.n_features] = self.time_bin(horizon);
        Ok(self.incidence_from_bins(&bins))
    }

    /// [`MultiIncidenceModel::predict_incidence`] at every grid horizon.
    pub fn predict_curves(&self, row: &[f64], grid: &TimeGrid) -> Result<Vec<IncidenceVector>> {
        self.check_row(row)?;
        Ok(self.curve_unchecked(row, grid.horizons()))
    }

    fn curve_unchecked(&self, row: &[f64], horizons: &[f64]) -> Vec<IncidenceVector> {
        let mut bins = self.bin_features(row);
        horizons
            .iter()
            .map(|&h| {
                if h <= 0.0 {
                    IncidenceVector::at_origin(self.n_events)
                } else {
                    bins[self.n_features] = self.time_bin(h);
                    self.incidence_from_bins(&bins)
                }
            })
            .collect()
    }

    /// Censoring survival `Ĝ(t | x)` from the censoring model.
    pub fn predict_censoring_survival(&self, row: &[f64], t: f64) -> Result<f64> {
        self.check_row(row)?;
        if t <= 0.0 {
            return Ok(1.0);
        }
        let mut bins = self.bin_features(row);
        bins[self.n_features] = self.time_bin(t);
        let mut raw = [0.0; 2];
        self.censoring_ensemble.raw_into(|j| bins[j], &mut raw);
        softmax_in_place(&mut raw);
        Ok(raw[0])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelDocument {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format != MODEL_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "not a model document (format `{}`)",
                header.format
            )));
        }
        if header.version > MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                kind: "model",
                found: header.version,
                supported: MODEL_FORMAT_VERSION,
            });
        }
        let doc: ModelDocument<Self> = serde_json::from_str(text)?;
        Ok(doc.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl IncidencePredictor for MultiIncidenceModel {
    fn n_events(&self) -> usize {
        self.n_events
    }

    /// Panics on a feature-count mismatch; use
    /// [`MultiIncidenceModel::predict_incidence`] for a checked call.
    fn predict(&self, row: &[f64], horizon: f64) -> IncidenceVector {
        self.predict_incidence(row, horizon)
            .expect("row length must match the model's feature count")
    }

    fn predict_curve(&self, row: &[f64], horizons: &[f64]) -> Vec<IncidenceVector> {
        assert_eq!(row.len(), self.n_features, "feature count mismatch");
        self.curve_unchecked(row, horizons)
    }
}

/// Fraction of sampled `(row, ζ < ζ′, k)` triples with
/// `F_k(ζ) <= F_k(ζ′) + tolerance`. The model does not enforce monotone
/// CIFs; this measures how far it strays.
pub fn monotonicity_audit(
    model: &MultiIncidenceModel,
    dataset: &SurvivalDataset,
    n_pairs: usize,
    tolerance: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = 0usize;
    let mut total = 0usize;
    for _ in 0..n_pairs {
        let i = rng.random_range(0..dataset.n_rows());
        let a = rng.random::<f64>() * model.t_max;
        let b = rng.random::<f64>() * model.t_max;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p = model.predict_incidence(dataset.row(i), lo)?;
        let q = model.predict_incidence(dataset.row(i), hi)?;
        for k in 1..=model.n_events {
            total += 1;
            ok += usize::from(p.cif(k) <= q.cif(k) + tolerance);
        }
    }
    Ok(if total == 0 { 1.0 } else { ok as f64 / total as f64 })
}
