use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bins::{fit_bins, BinMapper, BinnedMatrix};
use super::loss::{softmax_in_place, GradHess};
use super::tree::{grow_tree, Tree, TreeParams};
use crate::error::{Error, Result};

/// One tree per class per boosting round over a shared binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    n_classes: usize,
    base_scores: Vec<f64>,
    learning_rate: f64,
    rounds: Vec<Vec<Tree>>,
    bin_mapper: BinMapper,
}

const MIN_PRIOR: f64 = 1e-6;

impl BoostedEnsemble {
    pub fn new(n_classes: usize, learning_rate: f64, bin_mapper: BinMapper) -> Self {
        assert!(n_classes >= 2, "need at least two classes");
        Self {
            n_classes,
            base_scores: vec![0.0; n_classes],
            learning_rate,
            rounds: Vec::new(),
            bin_mapper,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.bin_mapper.n_features()
    }

    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn base_scores(&self) -> &[f64] {
        &self.base_scores
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn rounds(&self) -> &[Vec<Tree>] {
        &self.rounds
    }

    pub fn bin_mapper(&self) -> &BinMapper {
        &self.bin_mapper
    }

    pub fn set_base_scores(&mut self, base_scores: Vec<f64>) {
        assert_eq!(base_scores.len(), self.n_classes);
        self.base_scores = base_scores;
    }

    /// Log of the weighted class frequencies, floored at a small prior.
    pub fn init_base_scores(&mut self, targets: &[usize], weights: &[f64]) {
        let mut totals = vec![0.0; self.n_classes];
        for (&y, &w) in targets.iter().zip(weights) {
            totals[y] += w;
        }
        let sum: f64 = totals.iter().sum();
        if sum > 0.0 {
            self.base_scores = totals.iter().map(|&t| (t / sum).max(MIN_PRIOR).ln()).collect();
        }
    }

    pub fn push_round(&mut self, trees: Vec<Tree>) {
        assert_eq!(trees.len(), self.n_classes, "one tree per class");
        self.rounds.push(trees);
    }

    /// Raw class scores for an unbinned row.
    pub fn predict_raw(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n_features() {
            return Err(Error::FeatureCount {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        let binned = self.bin_mapper.bin_row(row);
        let mut out = vec![0.0; self.n_classes];
        self.raw_into(|j| binned[j], &mut out);
        Ok(out)
    }

    /// `base + lr · Σ_rounds tree(x)` for a row given by its bin lookup.
    #[inline]
    pub fn raw_into(&self, bin: impl Fn(usize) -> u8 + Copy, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for round in &self.rounds {
                acc += round[c].eval(bin);
            }
            *o = self.base_scores[c] + self.learning_rate * acc;
        }
    }

    /// Row-major `n × C` raw scores for every row of `data`.
    pub fn raw_scores(&self, data: &BinnedMatrix) -> Vec<f64> {
        let c = self.n_classes;
        let mut out = vec![0.0; data.n_rows() * c];
        out.par_chunks_mut(c)
            .enumerate()
            .for_each(|(r, o)| self.raw_into(|j| data.get(r, j), o));
        out
    }

    /// Raw scores restricted to rounds `from..`, added onto `raw`. Accumulates
    /// in the same order as [`BoostedEnsemble::raw_into`] only when `from == 0`
    /// and `raw` holds the base scores; otherwise it is an incremental update.
    pub fn add_rounds(&self, from: usize, data: &BinnedMatrix, raw: &mut [f64]) {
        let c = self.n_classes;
        let rounds = &self.rounds[from..];
        raw.par_chunks_mut(c).enumerate().for_each(|(r, o)| {
            for (k, o) in o.iter_mut().enumerate() {
                let mut acc = 0.0;
                for round in rounds {
                    acc += round[k].eval(|j| data.get(r, j));
                }
                *o += self.learning_rate * acc;
            }
        });
    }

    /// Fits one round of `C` trees to the weighted log-loss at `raw` and
    /// appends it. `rows` selects the training rows of `data`. Returns the
    /// weighted loss (summed over the selected rows) before the round.
    pub fn boost_round(
        &mut self,
        data: &BinnedMatrix,
        rows: &[u32],
        raw: &[f64],
        targets: &[usize],
        weights: &[f64],
        params: &TreeParams,
    ) -> f64 {
        let c = self.n_classes;
        let mut sub_raw = Vec::with_capacity(rows.len() * c);
        let mut sub_targets = Vec::with_capacity(rows.len());
        let mut sub_weights = Vec::with_capacity(rows.len());
        for &r in rows {
            let r = r as usize;
            sub_raw.extend_from_slice(&raw[r * c..(r + 1) * c]);
            sub_targets.push(targets[r]);
            sub_weights.push(weights[r]);
        }
        let (gh, loss) = GradHess::compute(&sub_raw, &sub_targets, &sub_weights, c);
        // Gradients are indexed by position in `rows`; remap the data so
        // tree row indices line up with them.
        let local = data.select(&rows.iter().map(|&r| r as usize).collect::<Vec<_>>());
        let local_rows: Vec<u32> = (0..rows.len() as u32).collect();
        let trees: Vec<Tree> = (0..c)
            .into_par_iter()
            .map(|k| grow_tree(&local, &local_rows, gh.grad(k), gh.hess(k), params))
            .collect();
        self.push_round(trees);
        loss
    }

    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>> {
        let mut raw = self.predict_raw(row)?;
        softmax_in_place(&mut raw);
        Ok(raw)
    }
}

/// Settings for [`train`], a plain weighted multiclass booster.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub tree: TreeParams,
}

/// Trains a multiclass classifier on a row-major feature matrix.
pub fn train(
    features: &[f64],
    n_features: usize,
    targets: &[usize],
    weights: &[f64],
    n_classes: usize,
    config: &BoostConfig,
) -> BoostedEnsemble {
    let n = targets.len();
    let mapper = fit_bins(features, n, n_features);
    let data = mapper.transform(features, n);
    let mut ensemble = BoostedEnsemble::new(n_classes, config.learning_rate, mapper);
    ensemble.init_base_scores(targets, weights);
    let mut raw: Vec<f64> = (0..n).flat_map(|_| ensemble.base_scores.clone()).collect();
    let rows: Vec<u32> = (0..n as u32).collect();
    for m in 0..config.n_rounds {
        ensemble.boost_round(&data, &rows, &raw, targets, weights, &config.tree);
        ensemble.add_rounds(m, &data, &mut raw);
    }
    ensemble
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::bins::FeatureBins;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_ensemble_returns_base() {
        let mut e = BoostedEnsemble::new(3, 0.1, BinMapper::new(vec![FeatureBins::from_edges(vec![0.0])]));
        e.set_base_scores(vec![0.5, -1.0, 2.0]);
        assert_eq!(e.predict_raw(&[3.0]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn single_leaf_round_accumulates() {
        let mut e = BoostedEnsemble::new(2, 0.1, BinMapper::new(vec![FeatureBins::from_edges(vec![])]));
        e.set_base_scores(vec![1.0, 2.0]);
        e.push_round(vec![Tree::leaf(3.0), Tree::leaf(-5.0)]);
        let raw = e.predict_raw(&[0.0]).unwrap();
        assert!((raw[0] - 1.3).abs() < 1e-15);
        assert!((raw[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn feature_count_mismatch() {
        let e = BoostedEnsemble::new(2, 0.1, BinMapper::new(vec![FeatureBins::from_edges(vec![])]));
        assert!(matches!(
            e.predict_raw(&[1.0, 2.0]),
            Err(Error::FeatureCount { expected: 1, got: 2 })
        ));
    }

    fn blobs(n: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            x.extend([a, b]);
            y.push(if a > 0.3 { 2 } else if b > 0.0 { 1 } else { 0 });
        }
        (x, y)
    }

    #[test]
    fn learns_axis_aligned_classes() {
        let (x, y) = blobs(2000, 1);
        let cfg = BoostConfig {
            n_rounds: 30,
            learning_rate: 0.3,
            tree: TreeParams {
                max_depth: 3,
                ..TreeParams::default()
            },
        };
        let e = train(&x, 2, &y, &vec![1.0; y.len()], 3, &cfg);
        let correct = (0..y.len())
            .filter(|&i| {
                let p = e.predict_proba(&x[2 * i..2 * i + 2]).unwrap();
                crate::prediction::argmax(&p) == y[i]
            })
            .count();
        assert!(correct as f64 / y.len() as f64 > 0.97);
        for i in 0..50 {
            let p = e.predict_proba(&x[2 * i..2 * i + 2]).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(e.predict_raw(&x[2 * i..2 * i + 2]).unwrap(), e.predict_raw(&x[2 * i..2 * i + 2]).unwrap());
        }
    }

    #[test]
    fn incremental_scores_match_full_recompute() {
        let (x, y) = blobs(500, 4);
        let cfg = BoostConfig {
            n_rounds: 10,
            learning_rate: 0.2,
            tree: TreeParams::default(),
        };
        let e = train(&x, 2, &y, &vec![1.0; y.len()], 3, &cfg);
        let data = e.bin_mapper().transform(&x, y.len());
        let full = e.raw_scores(&data);
        for i in 0..y.len() {
            let direct = e.predict_raw(&x[2 * i..2 * i + 2]).unwrap();
            for c in 0..3 {
                assert!((full[3 * i + c] - direct[c]).abs() < 1e-12);
            }
        }
    }
}
