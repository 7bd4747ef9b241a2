//! Histogram-based multiclass gradient boosting with per-row weights.
//!
//! Features are quantised into at most 255 bins, trees grow depth-wise on
//! second-order statistics of the weighted softmax log-loss, and each
//! boosting round adds one tree per class.

mod bins;
mod ensemble;
mod loss;
mod tree;

pub use bins::{fit_bins, BinMapper, BinnedMatrix, FeatureBins, MAX_BINS};
pub use ensemble::{train, BoostConfig, BoostedEnsemble};
pub use loss::{grad_hess, softmax_in_place, softmax_probs, weighted_log_loss, GradHess, LOG_FLOOR};
pub use tree::{grow_tree, leaf_value, Node, Tree, TreeParams};
