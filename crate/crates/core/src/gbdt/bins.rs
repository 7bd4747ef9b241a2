use serde::{Deserialize, Serialize};

/// Largest number of bins a feature may use; bin indices fit in a `u8`.
pub const MAX_BINS: usize = 255;

/// Upper-inclusive bin edges for one feature: value `v` falls in the bin
/// given by the number of edges strictly below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBins {
    edges: Vec<f64>,
}

impl FeatureBins {
    pub fn from_edges(edges: Vec<f64>) -> Self {
        assert!(edges.len() < MAX_BINS, "too many bin edges");
        assert!(
            edges.windows(2).all(|w| w[0] < w[1]),
            "bin edges must be strictly increasing"
        );
        Self { edges }
    }

    /// Quantile bins over the observed values of one column.
    pub fn fit(values: &[f64], max_bins: usize) -> Self {
        let max_bins = max_bins.clamp(1, MAX_BINS);
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() <= 1 {
            return Self { edges: Vec::new() };
        }
        if distinct.len() <= max_bins {
            let edges = distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
            return Self { edges };
        }
        let n = sorted.len();
        let mut edges: Vec<f64> = Vec::with_capacity(max_bins - 1);
        for j in 1..max_bins {
            let r = j * n / max_bins;
            if r == 0 || r >= n {
                continue;
            }
            let (lo, hi) = (sorted[r - 1], sorted[r]);
            let edge = if lo < hi { midpoint(lo, hi) } else { lo };
            if edge < sorted[n - 1] && edges.last().is_none_or(|&e| e < edge) {
                edges.push(edge);
            }
        }
        Self { edges }
    }

    /// `bins` equal-width bins over `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.clamp(1, MAX_BINS);
        let width = (hi - lo) / bins as f64;
        let edges = (1..bins).map(|j| lo + width * j as f64).collect();
        Self { edges }
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    #[inline]
    pub fn bin(&self, value: f64) -> u8 {
        self.edges.partition_point(|&e| e < value) as u8
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // Guard against rounding onto the upper value for adjacent floats.
    if m < b {
        m
    } else {
        a
    }
}

/// Per-feature binning thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    features: Vec<FeatureBins>,
}

impl BinMapper {
    pub fn new(features: Vec<FeatureBins>) -> Self {
        Self { features }
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature(&self, j: usize) -> &FeatureBins {
        &self.features[j]
    }

    pub fn push(&mut self, bins: FeatureBins) {
        self.features.push(bins);
    }

    pub fn bin_row(&self, row: &[f64]) -> Vec<u8> {
        self.features.iter().zip(row).map(|(b, &v)| b.bin(v)).collect()
    }

    /// Bins a row-major `n × d` matrix into column-major storage.
    pub fn transform(&self, features: &[f64], n_rows: usize) -> BinnedMatrix {
        let d = self.n_features();
        assert_eq!(features.len(), n_rows * d, "feature matrix shape");
        let columns = (0..d)
            .map(|j| {
                let bins = &self.features[j];
                (0..n_rows).map(|i| bins.bin(features[i * d + j])).collect()
            })
            .collect();
        BinnedMatrix { n_rows, columns }
    }
}

/// Quantile bin edges for every column of a row-major `n × d` matrix.
pub fn fit_bins(features: &[f64], n_rows: usize, n_features: usize) -> BinMapper {
    assert!(n_rows >= 1, "binning needs at least one row");
    assert_eq!(features.len(), n_rows * n_features, "feature matrix shape");
    let features = (0..n_features)
        .map(|j| {
            let column: Vec<f64> = (0..n_rows).map(|i| features[i * n_features + j]).collect();
            FeatureBins::fit(&column, MAX_BINS)
        })
        .collect();
    BinMapper { features }
}

/// Column-major bin indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMatrix {
    n_rows: usize,
    columns: Vec<Vec<u8>>,
}

impl BinnedMatrix {
    pub fn from_columns(n_rows: usize, columns: Vec<Vec<u8>>) -> Self {
        assert!(columns.iter().all(|c| c.len() == n_rows), "column length");
        Self { n_rows, columns }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[u8] {
        &self.columns[j]
    }

    #[inline]
    pub fn get(&self, row: usize, feature: usize) -> u8 {
        self.columns[feature][row]
    }

    /// Rows `keep`, in the given order.
    pub fn select(&self, keep: &[usize]) -> Self {
        Self {
            n_rows: keep.len(),
            columns: self
                .columns
                .iter()
                .map(|c| keep.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_column_has_one_bin() {
        let b = FeatureBins::fit(&[3.0; 10], MAX_BINS);
        assert_eq!(b.n_bins(), 1);
        for v in [-1e9, 3.0, 7.0] {
            assert_eq!(b.bin(v), 0);
        }
    }

    #[test]
    fn few_distinct_values() {
        let b = FeatureBins::fit(&[4.0, 1.0, 2.0, 2.0, 8.0, 1.0], MAX_BINS);
        assert_eq!(b.n_bins(), 4);
        assert_eq!(b.edges(), &[1.5, 3.0, 6.0]);
        assert_eq!(
            [1.0, 2.0, 4.0, 8.0].map(|v| b.bin(v)),
            [0, 1, 2, 3]
        );
    }

    #[test]
    fn uniform_values_fill_bins_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let b = FeatureBins::fit(&values, MAX_BINS);
        assert_eq!(b.n_bins(), MAX_BINS);
        let mut counts = vec![0usize; b.n_bins()];
        for &v in &values {
            counts[b.bin(v) as usize] += 1;
        }
        let lo = *counts.iter().min().unwrap() as f64;
        let hi = *counts.iter().max().unwrap() as f64;
        assert!((hi - lo) / hi <= 0.05, "min {lo} max {hi}");
    }

    #[test]
    fn uniform_edges() {
        let b = FeatureBins::uniform(0.0, 10.0, 5);
        assert_eq!(b.edges(), &[2.0, 4.0, 6.0, 8.0]);
        assert_eq!(b.bin(0.1), 0);
        assert_eq!(b.bin(2.0), 0);
        assert_eq!(b.bin(10.0), 4);
    }

    #[test]
    fn transform_is_column_major() {
        let mapper = fit_bins(&[1.0, 10.0, 2.0, 20.0, 3.0, 30.0], 3, 2);
        let m = mapper.transform(&[1.0, 10.0, 2.0, 20.0, 3.0, 30.0], 3);
        assert_eq!(m.column(0), &[0, 1, 2]);
        assert_eq!(m.column(1), &[0, 1, 2]);
        assert_eq!(mapper.bin_row(&[2.5, 5.0]), vec![1, 0]);
        assert_eq!(mapper.bin_row(&[2.6, 5.0]), vec![2, 0]);
    }
}
