//! Weighted multiclass log-loss on softmax outputs.

use crate::prediction::IncidenceVector;

/// Probabilities below this are floored before taking logs.
pub const LOG_FLOOR: f64 = 1e-15;

/// In-place softmax with max-shift.
pub fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

pub fn softmax_probs(raw_scores: &[f64]) -> IncidenceVector {
    let mut probs = raw_scores.to_vec();
    softmax_in_place(&mut probs);
    IncidenceVector::from_probs(probs)
}

/// `w · (−log p_target)`.
pub fn weighted_log_loss(probs: &[f64], target: usize, weight: f64) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    -weight * probs[target].max(LOG_FLOOR).ln()
}

/// Gradient and hessian diagonal of the weighted log-loss with respect to
/// the raw scores.
pub fn grad_hess(probs: &[f64], target: usize, weight: f64) -> (Vec<f64>, Vec<f64>) {
    let mut grad = vec![0.0; probs.len()];
    let mut hess = vec![0.0; probs.len()];
    grad_hess_into(probs, target, weight, &mut grad, &mut hess);
    (grad, hess)
}

#[inline]
pub(crate) fn grad_hess_into(
    probs: &[f64],
    target: usize,
    weight: f64,
    grad: &mut [f64],
    hess: &mut [f64],
) {
    for (c, &p) in probs.iter().enumerate() {
        let y = if c == target { 1.0 } else { 0.0 };
        grad[c] = weight * (p - y);
        hess[c] = weight * p * (1.0 - p);
    }
}

/// Per-row, per-class gradients and hessians, stored class-major so each
/// class's tree reads one contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct GradHess {
    n_rows: usize,
    n_classes: usize,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl GradHess {
    /// `raw` is row-major `n × C`. Returns the gradients and the summed
    /// weighted log-loss at `raw`.
    pub fn compute(raw: &[f64], targets: &[usize], weights: &[f64], n_classes: usize) -> (Self, f64) {
        let n_rows = targets.len();
        assert_eq!(raw.len(), n_rows * n_classes);
        assert_eq!(weights.len(), n_rows);
        let mut grad = vec![0.0; n_rows * n_classes];
        let mut hess = vec![0.0; n_rows * n_classes];
        let mut probs = vec![0.0; n_classes];
        let mut g = vec![0.0; n_classes];
        let mut h = vec![0.0; n_classes];
        let mut loss = 0.0;
        for i in 0..n_rows {
            probs.copy_from_slice(&raw[i * n_classes..(i + 1) * n_classes]);
            softmax_in_place(&mut probs);
            grad_hess_into(&probs, targets[i], weights[i], &mut g, &mut h);
            loss += weighted_log_loss(&probs, targets[i], weights[i]);
            for c in 0..n_classes {
                grad[c * n_rows + i] = g[c];
                hess[c * n_rows + i] = h[c];
            }
        }
        (
            Self {
                n_rows,
                n_classes,
                grad,
                hess,
            },
            loss,
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn grad(&self, class: usize) -> &[f64] {
        &self.grad[class * self.n_rows..(class + 1) * self.n_rows]
    }

    pub fn hess(&self, class: usize) -> &[f64] {
        &self.hess[class * self.n_rows..(class + 1) * self.n_rows]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loss_at(scores: &[f64], target: usize, weight: f64) -> f64 {
        let mut p = scores.to_vec();
        softmax_in_place(&mut p);
        -weight * p[target].ln()
    }

    #[test]
    fn equal_scores_are_uniform() {
        let v = softmax_probs(&[0.7; 4]);
        for &p in v.probs() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_score() {
        let v = softmax_probs(&[0.0, -800.0, -900.0]);
        assert!((v.survival() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_one_two_three() {
        let v = softmax_probs(&[1.0, 2.0, 3.0]);
        // Direct evaluation e^s / Σ e^s without max-shift.
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|s| s.exp()).sum();
        for (c, s) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            assert!((v.probs()[c] - s.exp() / z).abs() < 1e-15);
        }
        let rounded: Vec<f64> = v.probs().iter().map(|p| (p * 1e4).round() / 1e4).collect();
        assert_eq!(rounded, vec![0.09, 0.2447, 0.6652]);
    }

    #[test]
    fn zero_weight_has_no_gradient() {
        let (g, h) = grad_hess(&[0.2, 0.3, 0.5], 1, 0.0);
        assert!(g.iter().chain(&h).all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_closed_form() {
        let third = 1.0 / 3.0;
        let (g, _) = grad_hess(&[third; 3], 1, 1.0);
        let expected = [third, third - 1.0, third];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-5;
        for _ in 0..100 {
            let c = rng.random_range(2..6);
            let scores: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
            let target = rng.random_range(0..c);
            let weight = 2.0;
            let mut probs = scores.clone();
            softmax_in_place(&mut probs);
            let (g, _) = grad_hess(&probs, target, weight);
            for j in 0..c {
                let mut up = scores.clone();
                let mut down = scores.clone();
                up[j] += step;
                down[j] -= step;
                let fd = (loss_at(&up, target, weight) - loss_at(&down, target, weight)) / (2.0 * step);
                assert!((fd - g[j]).abs() < 1e-6, "class {j}: fd {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn gradients_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..4).map(|_| rng.random_range(-4.0..4.0)).collect();
            let probs = softmax_probs(&scores);
            let (g, h) = grad_hess(probs.probs(), rng.random_range(0..4), rng.random_range(0.1..5.0));
            assert!(g.iter().sum::<f64>().abs() < 1e-12);
            assert!(h.iter().all(|&v| v >= 0.0));
        }
    }
}
