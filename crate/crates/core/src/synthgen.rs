//! Weibull competing-risks simulator with exact oracles.
//!
//! Each row draws standard-normal features; every event `k` has a latent
//! Weibull time whose shape and scale are `softplus(b + w·x) + 0.1`. The
//! observed event is the earliest latent time. Censoring is another Weibull
//! driven by the first `censoring_dependence` features, stretched by a global
//! multiplier chosen so that the realized censoring fraction hits the target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SurvivalDataset, TimeGrid};
use crate::error::{Error, Result};
use crate::marginal::CensoringSurvival;
use crate::metrics::{integrated_brier_of, IbsReport};
use crate::prediction::{IncidencePredictor, IncidenceVector};
use crate::quadrature::integrate;

/// Allowed gap between realized and requested censoring rates.
pub const CALIBRATION_TOLERANCE: f64 = 0.02;
const BISECTION_STEPS: usize = 200;
const PIECE_TOLERANCE: f64 = 1e-10;
const LINK_OFFSET: f64 = 0.1;

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// `softplus(intercept + weights·x) + 0.1`; `weights` may be shorter than
/// `x`, in which case the remaining features have no effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullLink {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl WeibullLink {
    pub fn constant(intercept: f64) -> Self {
        Self {
            intercept,
            weights: Vec::new(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let z = self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        softplus(z) + LINK_OFFSET
    }
}

/// Weibull with survival `exp(−(t/scale)^shape)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weibull {
    pub shape: f64,
    pub scale: f64,
}

impl Weibull {
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            (t / self.scale).powf(self.shape)
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        -(-self.cumulative_hazard(t)).exp_m1()
    }

    /// Inverse-survival draw from `u ∈ (0, 1]`.
    pub fn quantile_survival(&self, u: f64) -> f64 {
        self.scale * (-u.ln()).powf(1.0 / self.shape)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// One link per event.
    pub event_shape: Vec<WeibullLink>,
    pub event_scale: Vec<WeibullLink>,
    pub censoring_shape: WeibullLink,
    pub censoring_scale: WeibullLink,
}

const STANDARD_SHAPE_INTERCEPTS: [f64; 3] = [1.0, 0.3, 1.8];
const STANDARD_SCALE_INTERCEPTS: [f64; 3] = [1.5, 2.0, 1.0];
const SHAPE_WEIGHT_SD: f64 = 0.15;
const SCALE_WEIGHT_SD: f64 = 0.4;
const COEFFICIENT_SEED: u64 = 0x5eed;

impl Coefficients {
    /// Fixed coefficients for `n_events` events over `n_features` features,
    /// the same for every sampling seed so that independent draws share one
    /// data-generating law.
    pub fn standard(n_events: usize, n_features: usize, censoring_dependence: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(COEFFICIENT_SEED);
        let mut weights = |sd: f64, len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let mut event_shape = Vec::with_capacity(n_events);
        let mut event_scale = Vec::with_capacity(n_events);
        for k in 0..n_events {
            event_shape.push(WeibullLink {
                intercept: STANDARD_SHAPE_INTERCEPTS[k % 3],
                weights: weights(SHAPE_WEIGHT_SD, n_features),
            });
            event_scale.push(WeibullLink {
                intercept: STANDARD_SCALE_INTERCEPTS[k % 3],
                weights: weights(SCALE_WEIGHT_SD, n_features),
            });
        }
        Self {
            event_shape,
            event_scale,
            censoring_shape: WeibullLink {
                intercept: 1.0,
                weights: weights(SHAPE_WEIGHT_SD, censoring_dependence),
            },
            censoring_scale: WeibullLink {
                intercept: 1.5,
                weights: weights(SCALE_WEIGHT_SD, censoring_dependence),
            },
        }
    }

    /// Covariate-free laws: every row shares the same Weibulls.
    pub fn constant(event_shape: &[f64], event_scale: &[f64], censoring: (f64, f64)) -> Self {
        assert_eq!(event_shape.len(), event_scale.len());
        Self {
            event_shape: event_shape.iter().map(|&b| WeibullLink::constant(b)).collect(),
            event_scale: event_scale.iter().map(|&b| WeibullLink::constant(b)).collect(),
            censoring_shape: WeibullLink::constant(censoring.0),
            censoring_scale: WeibullLink::constant(censoring.1),
        }
    }

    pub fn n_events(&self) -> usize {
        self.event_shape.len()
    }

    pub fn event_laws(&self, x: &[f64]) -> Vec<Weibull> {
        self.event_shape
            .iter()
            .zip(&self.event_scale)
            .map(|(a, l)| Weibull {
                shape: a.eval(x),
                scale: l.eval(x),
            })
            .collect()
    }

    /// Censoring law before the global multiplier is applied.
    pub fn censoring_law(&self, x: &[f64]) -> Weibull {
        Weibull {
            shape: self.censoring_shape.eval(x),
            scale: self.censoring_scale.eval(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_events: usize,
    pub n_features: usize,
    /// Number of leading features the censoring law depends on.
    pub censoring_dependence: usize,
    pub target_censoring_rate: f64,
    pub seed: u64,
    pub coefficients: Coefficients,
    /// Reuse a previously calibrated censoring multiplier instead of
    /// calibrating on this sample; lets a test set share the training law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub censoring_multiplier: Option<f64>,
}

impl SynthConfig {
    pub fn standard(
        n_samples: usize,
        n_events: usize,
        n_features: usize,
        censoring_dependence: usize,
        target_censoring_rate: f64,
        seed: u64,
    ) -> Self {
        Self {
            n_samples,
            n_events,
            n_features,
            censoring_dependence,
            target_censoring_rate,
            seed,
            coefficients: Coefficients::standard(n_events, n_features, censoring_dependence),
            censoring_multiplier: None,
        }
    }

    /// Three events, ten features, censoring driven by six of them.
    pub fn benchmark(n_samples: usize, target_censoring_rate: f64, seed: u64) -> Self {
        Self::standard(n_samples, 3, 10, 6, target_censoring_rate, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if self.n_events == 0 {
            return bad("need at least one event type".into());
        }
        if self.censoring_dependence > self.n_features {
            return bad(format!(
                "censoring depends on {} features but only {} exist",
                self.censoring_dependence, self.n_features
            ));
        }
        if !(0.0..1.0).contains(&self.target_censoring_rate) {
            return bad(format!(
                "censoring rate must lie in [0, 1), got {}",
                self.target_censoring_rate
            ));
        }
        let c = &self.coefficients;
        if c.event_shape.len() != self.n_events || c.event_scale.len() != self.n_events {
            return bad("one shape and one scale link per event are required".into());
        }
        let too_long = c
            .event_shape
            .iter()
            .chain(&c.event_scale)
            .chain([&c.censoring_shape, &c.censoring_scale])
            .any(|l| l.weights.len() > self.n_features);
        if too_long {
            return bad("a link has more weights than features".into());
        }
        if let Some(m) = self.censoring_multiplier {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("censoring multiplier must be positive, got {m}"));
            }
        }
        Ok(())
    }
}

/// True incidence functions of a simulated law, for any covariate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCif {
    coefficients: Coefficients,
}

impl OracleCif {
    pub fn new(coefficients: Coefficients) -> Self {
        Self { coefficients }
    }

    pub fn survival(&self, x: &[f64], horizon: f64) -> f64 {
        let total: f64 = self
            .coefficients
            .event_laws(x)
            .iter()
            .map(|w| w.cumulative_hazard(horizon))
            .sum();
        (-total).exp()
    }

    /// `F*_k(horizon | x)` for `k` in `1..=K`.
    pub fn cif(&self, x: &[f64], horizon: f64, k: usize) -> f64 {
        let laws = self.coefficients.event_laws(x);
        cif_pieces(&laws, k - 1, &[horizon])[0]
    }
}

/// In the variable `v = H_k(u)`, `F_k(ζ) = ∫_0^{H_k(ζ)} e^{−v} Π_{j≠k} S_j(u(v)) dv`.
/// Near zero each other hazard behaves like `v^{a_j/a_k}`, which is
/// singular when `a_j < a_k`. Integrating in `w = v^{1/q}` with `q` an
/// integer at least twice every ratio `a_k/a_j` turns those terms into
/// powers of at least 2 and keeps the Jacobian `q·w^{q−1}` smooth.
/// Integrates between consecutive horizons and accumulates.
fn cif_pieces(laws: &[Weibull], k: usize, horizons: &[f64]) -> Vec<f64> {
    let own = laws[k];
    let ratio = laws
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, w)| own.shape / w.shape)
        .fold(1.0, f64::max);
    let q = (2.0 * ratio).ceil();
    let integrand = |w: f64| {
        let v = w.powf(q);
        let u = own.scale * v.powf(1.0 / own.shape);
        let others: f64 = laws
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, l)| l.cumulative_hazard(u))
            .sum();
        q * w.powf(q - 1.0) * (-v - others).exp()
    };
    let mut out = Vec::with_capacity(horizons.len());
    let mut acc = 0.0;
    let mut w_prev = 0.0;
    for &h in horizons {
        let w = own.cumulative_hazard(h.max(0.0)).powf(1.0 / q);
        if w > w_prev {
            acc += integrate(integrand, w_prev, w, PIECE_TOLERANCE);
            w_prev = w;
        }
        out.push(acc);
    }
    out
}

impl IncidencePredictor for OracleCif {
    fn n_events(&self) -> usize {
        self.coefficients.n_events()
    }

    fn predict(&self, row: &[f64], horizon: f64) -> IncidenceVector {
        self.predict_curve(row, &[horizon]).pop().unwrap()
    }

    /// Horizons must be ascending.
    fn predict_curve(&self, row: &[f64], horizons: &[f64]) -> Vec<IncidenceVector> {
        let laws = self.coefficients.event_laws(row);
        let cifs: Vec<Vec<f64>> = (0..laws.len()).map(|k| cif_pieces(&laws, k, horizons)).collect();
        horizons
            .iter()
            .enumerate()
            .map(|(h, &zeta)| {
                let total: f64 = laws.iter().map(|w| w.cumulative_hazard(zeta)).sum();
                let mut probs = Vec::with_capacity(laws.len() + 1);
                probs.push((-total).exp());
                probs.extend(cifs.iter().map(|c| c[h]));
                IncidenceVector::from_probs(probs)
            })
            .collect()
    }
}

/// True censoring survival of each row of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCensoring {
    /// `None` when censoring is disabled.
    laws: Option<Vec<Weibull>>,
}

impl OracleCensoring {
    pub fn for_dataset(
        coefficients: &Coefficients,
        dataset: &SurvivalDataset,
        multiplier: Option<f64>,
    ) -> Self {
        let laws = multiplier.map(|m| {
            (0..dataset.n_rows())
                .map(|i| {
                    let w = coefficients.censoring_law(dataset.row(i));
                    Weibull {
                        shape: w.shape,
                        scale: w.scale * m,
                    }
                })
                .collect()
        });
        Self { laws }
    }

    pub fn law(&self, row: usize) -> Option<Weibull> {
        self.laws.as_ref().map(|l| l[row])
    }
}

impl CensoringSurvival for OracleCensoring {
    fn survival(&self, row: usize, t: f64) -> f64 {
        self.law(row).map_or(1.0, |w| w.survival(t))
    }

    fn survival_before(&self, row: usize, t: f64) -> f64 {
        self.survival(row, t)
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: SurvivalDataset,
    pub oracle: OracleCif,
    pub censoring: OracleCensoring,
    /// Scale multiplier applied to every row's censoring law; `None` when
    /// censoring is disabled.
    pub censoring_multiplier: Option<f64>,
}

struct Draw {
    features: Vec<f64>,
    latent: f64,
    event: usize,
    censoring: f64,
}

fn draw_row(config: &SynthConfig, row: usize) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(row as u64);
    let features: Vec<f64> = (0..config.n_features)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let laws = config.coefficients.event_laws(&features);
    let mut latent = f64::INFINITY;
    let mut event = 0;
    for (k, law) in laws.iter().enumerate() {
        let t = law.quantile_survival(1.0 - rng.random::<f64>());
        if t < latent {
            latent = t;
            event = k + 1;
        }
    }
    let censoring = config
        .coefficients
        .censoring_law(&features)
        .quantile_survival(1.0 - rng.random::<f64>());
    Draw {
        features,
        latent,
        event,
        censoring,
    }
}

fn censored_fraction(ratios: &[f64], multiplier: f64) -> f64 {
    ratios.iter().filter(|&&r| r > multiplier).count() as f64 / ratios.len() as f64
}

/// Bisection on `log m` for the multiplier whose censored fraction
/// `#{T*/C > m} / n` is closest to `target`.
fn calibrate(ratios: &[f64], target: f64) -> Result<f64> {
    let finite = || ratios.iter().copied().filter(|r| r.is_finite() && *r > 0.0);
    let lo_r = finite().fold(f64::INFINITY, f64::min);
    let hi_r = finite().fold(0.0, f64::max);
    if !lo_r.is_finite() {
        return Err(Error::Calibration {
            realized: 0.0,
            target,
        });
    }
    // The fraction decreases in m: above at `lo`, below at `hi`.
    let (mut lo, mut hi) = (lo_r.ln() - 1.0, hi_r.ln() + 1.0);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if censored_fraction(ratios, mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (f_lo, f_hi) = (censored_fraction(ratios, lo.exp()), censored_fraction(ratios, hi.exp()));
    let (m, realized) = if (f_lo - target).abs() < (f_hi - target).abs() {
        (lo.exp(), f_lo)
    } else {
        (hi.exp(), f_hi)
    };
    // One row is the finest step the fraction can take.
    let tolerance = CALIBRATION_TOLERANCE.max(1.0 / ratios.len() as f64);
    if (realized - target).abs() > tolerance {
        return Err(Error::Calibration { realized, target });
    }
    Ok(m)
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let draws: Vec<Draw> = (0..config.n_samples)
        .into_par_iter()
        .map(|i| draw_row(config, i))
        .collect();

    let multiplier = if config.target_censoring_rate == 0.0 {
        None
    } else if let Some(m) = config.censoring_multiplier {
        Some(m)
    } else {
        let ratios: Vec<f64> = draws.iter().map(|d| d.latent / d.censoring).collect();
        Some(calibrate(&ratios, config.target_censoring_rate)?)
    };

    let mut features = Vec::with_capacity(config.n_samples * config.n_features);
    let mut durations = Vec::with_capacity(config.n_samples);
    let mut events = Vec::with_capacity(config.n_samples);
    for d in &draws {
        features.extend_from_slice(&d.features);
        let c = multiplier.map_or(f64::INFINITY, |m| m * d.censoring);
        if c < d.latent {
            durations.push(c);
            events.push(0);
        } else {
            durations.push(d.latent);
            events.push(d.event);
        }
    }
    let names = (0..config.n_features).map(|j| format!("x{j}")).collect();
    let dataset = SurvivalDataset::with_event_count(names, features, durations, events, config.n_events)?;
    let censoring = OracleCensoring::for_dataset(&config.coefficients, &dataset, multiplier);
    Ok(SynthOutput {
        dataset,
        oracle: OracleCif::new(config.coefficients.clone()),
        censoring,
        censoring_multiplier: multiplier,
    })
}

/// Integrated Brier score of the true incidence functions, weighted by the
/// true censoring law.
pub fn oracle_ibs(
    config: &SynthConfig,
    dataset: &SurvivalDataset,
    grid: &TimeGrid,
    censoring_multiplier: Option<f64>,
    clip_floor: f64,
) -> Result<IbsReport> {
    let oracle = OracleCif::new(config.coefficients.clone());
    let censoring = OracleCensoring::for_dataset(&config.coefficients, dataset, censoring_multiplier);
    integrated_brier_of(&oracle, dataset, grid, &censoring, clip_floor)
}

/// What `generate` writes next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub config: SynthConfig,
    pub censoring_multiplier: Option<f64>,
    pub realized_censoring_rate: f64,
    pub ibs_grid: Vec<f64>,
    /// Oracle IBS on the generated sample over `ibs_grid`.
    pub oracle_ibs: f64,
    pub oracle_ibs_per_event: Vec<f64>,
}
