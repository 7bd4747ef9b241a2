//! Competing-risks survival analysis.
//!
//! The crate estimates the cumulative incidence of `K` mutually exclusive
//! events together with the any-event survival, all as one probability
//! vector per horizon. The main model ([`multiincidence`]) is a gradient
//! boosted classifier trained with an inverse-probability-of-censoring
//! weighted multiclass log-loss, with the horizon stacked as an input
//! feature and resampled every boosting round.
//!
//! Supporting modules provide marginal baselines ([`marginal`]),
//! censoring-aware metrics ([`metrics`]), a Weibull data generator with
//! exact oracles ([`synthgen`]) and a small benchmark harness ([`bench`]).

// `!(a < b)` is deliberate in input checks: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod data;
mod error;
pub mod gbdt;
pub mod marginal;
pub mod metrics;
pub mod multiincidence;
pub mod prediction;
pub mod quadrature;
pub mod synthgen;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::{SurvivalDataset, TimeGrid};
pub use error::{Error, Result};
pub use marginal::{CensoringSurvival, StepCurve};
pub use multiincidence::{MultiIncidenceModel, TrainConfig};
pub use prediction::{IncidencePredictor, IncidenceVector, PredictionCube};
