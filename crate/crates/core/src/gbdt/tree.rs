//! Depth-wise histogram regression trees fitted to second-order statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bins::{BinnedMatrix, MAX_BINS};

/// Split-search and leaf regularisation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Smallest hessian sum allowed in a child.
    pub min_child_hess: f64,
    /// Smallest number of rows with non-zero hessian allowed in a child.
    pub min_data_in_leaf: usize,
    /// Bound on the magnitude of a leaf value, if any. A row with a large
    /// weight that the model gets confidently wrong has gradient `≈ w` but
    /// hessian `≈ 0`, and its unbounded Newton step can be huge.
    pub max_leaf_step: Option<f64>,
}

impl TreeParams {
    fn leaf(&self, grad: f64, hess: f64) -> f64 {
        let v = leaf_value(grad, hess, self.lambda);
        match self.max_leaf_step {
            Some(cap) => v.clamp(-cap, cap),
            None => v,
        }
    }
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            lambda: 1.0,
            min_child_hess: 1e-3,
            min_data_in_leaf: 20,
            max_leaf_step: None,
        }
    }
}

const HESS_FLOOR: f64 = 1e-16;
/// Below this many row-feature cells a node's histograms are built serially.
const PARALLEL_CELLS: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: u32,
        /// Rows with bin `<= threshold` go left.
        threshold: u8,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    depth: u32,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
            depth: 0,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        self.depth as usize
    }

    /// Leaf value reached by a row whose bin for feature `j` is `bin(j)`.
    #[inline]
    pub fn eval(&self, bin: impl Fn(usize) -> u8) -> f64 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if bin(*feature as usize) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn eval_binned_row(&self, row: &[u8]) -> f64 {
        self.eval(|j| row[j])
    }

    pub fn eval_matrix_row(&self, data: &BinnedMatrix, row: usize) -> f64 {
        self.eval(|j| data.get(row, j))
    }

    /// Checks the structural invariants: every index in range, each node
    /// reached once from the root, depth within `max_depth`.
    pub fn is_well_formed(&self, max_depth: usize) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![(0usize, 0usize)];
        let mut deepest = 0;
        while let Some((i, depth)) = stack.pop() {
            if i >= self.nodes.len() || seen[i] {
                return false;
            }
            seen[i] = true;
            deepest = deepest.max(depth);
            if let Node::Split { left, right, .. } = self.nodes[i] {
                stack.push((left as usize, depth + 1));
                stack.push((right as usize, depth + 1));
            }
        }
        seen.iter().all(|&s| s) && deepest <= max_depth && deepest == self.depth as usize
    }
}

#[derive(Clone, Copy, Default)]
struct HistBin {
    grad: f64,
    hess: f64,
    count: u32,
}

type Histogram = Vec<[HistBin; MAX_BINS]>;

struct Pending {
    node: usize,
    rows: Vec<u32>,
    hist: Histogram,
    grad: f64,
    hess: f64,
    count: u32,
    depth: usize,
}

struct Split {
    feature: usize,
    threshold: u8,
    gain: f64,
    left_grad: f64,
    left_hess: f64,
    left_count: u32,
}

fn build_histogram(data: &BinnedMatrix, rows: &[u32], grad: &[f64], hess: &[f64]) -> Histogram {
    let one = |j: usize| {
        let col = data.column(j);
        let mut h = [HistBin::default(); MAX_BINS];
        for &r in rows {
            let r = r as usize;
            let b = &mut h[col[r] as usize];
            b.grad += grad[r];
            b.hess += hess[r];
            b.count += u32::from(hess[r] > 0.0);
        }
        h
    };
    if rows.len() * data.n_features() >= PARALLEL_CELLS {
        (0..data.n_features()).into_par_iter().map(one).collect()
    } else {
        (0..data.n_features()).map(one).collect()
    }
}

fn subtract(parent: &Histogram, child: &Histogram) -> Histogram {
    parent
        .iter()
        .zip(child)
        .map(|(p, c)| {
            let mut out = [HistBin::default(); MAX_BINS];
            for b in 0..MAX_BINS {
                out[b] = HistBin {
                    grad: p[b].grad - c[b].grad,
                    hess: p[b].hess - c[b].hess,
                    count: p[b].count - c[b].count,
                };
            }
            out
        })
        .collect()
}

#[inline]
fn score(grad: f64, hess: f64, lambda: f64) -> f64 {
    grad * grad / (hess + lambda).max(HESS_FLOOR)
}

/// Newton step `−G / (H + λ)`.
#[inline]
pub fn leaf_value(grad: f64, hess: f64, lambda: f64) -> f64 {
    -grad / (hess + lambda).max(HESS_FLOOR)
}

fn best_split(p: &Pending, params: &TreeParams) -> Option<Split> {
    let parent = score(p.grad, p.hess, params.lambda);
    let mut best: Option<Split> = None;
    for (feature, hist) in p.hist.iter().enumerate() {
        let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0u32);
        for (b, bin) in hist.iter().enumerate().take(MAX_BINS - 1) {
            gl += bin.grad;
            hl += bin.hess;
            nl += bin.count;
            let (gr, hr, nr) = (p.grad - gl, p.hess - hl, p.count - nl);
            if (nl as usize) < params.min_data_in_leaf || (nr as usize) < params.min_data_in_leaf {
                continue;
            }
            if hl < params.min_child_hess || hr < params.min_child_hess {
                continue;
            }
            let gain = score(gl, hl, params.lambda) + score(gr, hr, params.lambda) - parent;
            if gain > 0.0 && best.as_ref().is_none_or(|s| gain > s.gain) {
                best = Some(Split {
                    feature,
                    threshold: b as u8,
                    gain,
                    left_grad: gl,
                    left_hess: hl,
                    left_count: nl,
                });
            }
        }
    }
    best
}

/// Grows one tree on the rows listed in `rows`.
///
/// Rows whose gradient and hessian are both zero leave every histogram,
/// gain and leaf value bit-for-bit unchanged, so dropping them yields the
/// same tree.
pub fn grow_tree(
    data: &BinnedMatrix,
    rows: &[u32],
    grad: &[f64],
    hess: &[f64],
    params: &TreeParams,
) -> Tree {
    let (mut g, mut h, mut n) = (0.0, 0.0, 0u32);
    for &r in rows {
        g += grad[r as usize];
        h += hess[r as usize];
        n += u32::from(hess[r as usize] > 0.0);
    }
    let mut nodes = vec![Node::Leaf {
        value: params.leaf(g, h),
    }];
    let mut depth_reached = 0;
    if params.max_depth == 0 || rows.is_empty() {
        return Tree {
            nodes,
            depth: 0,
        };
    }
    let mut level = vec![Pending {
        node: 0,
        rows: rows.to_vec(),
        hist: build_histogram(data, rows, grad, hess),
        grad: g,
        hess: h,
        count: n,
        depth: 0,
    }];
    while !level.is_empty() {
        let mut next = Vec::new();
        for p in level {
            if p.depth >= params.max_depth {
                continue;
            }
            let Some(split) = best_split(&p, params) else {
                continue;
            };
            let col = data.column(split.feature);
            let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = p
                .rows
                .iter()
                .partition(|&&r| col[r as usize] <= split.threshold);
            let (rg, rh, rn) = (
                p.grad - split.left_grad,
                p.hess - split.left_hess,
                p.count - split.left_count,
            );
            // Histogram the child with fewer informative rows, derive the
            // other from the parent.
            let (left_hist, right_hist) = if split.left_count <= rn {
                let lh = build_histogram(data, &left_rows, grad, hess);
                let rhist = subtract(&p.hist, &lh);
                (lh, rhist)
            } else {
                let rhist = build_histogram(data, &right_rows, grad, hess);
                let lh = subtract(&p.hist, &rhist);
                (lh, rhist)
            };
            let left = nodes.len();
            nodes.push(Node::Leaf {
                value: params.leaf(split.left_grad, split.left_hess),
            });
            let right = nodes.len();
            nodes.push(Node::Leaf {
                value: params.leaf(rg, rh),
            });
            nodes[p.node] = Node::Split {
                feature: split.feature as u32,
                threshold: split.threshold,
                left: left as u32,
                right: right as u32,
            };
            depth_reached = depth_reached.max(p.depth + 1);
            next.push(Pending {
                node: left,
                rows: left_rows,
                hist: left_hist,
                grad: split.left_grad,
                hess: split.left_hess,
                count: split.left_count,
                depth: p.depth + 1,
            });
            next.push(Pending {
                node: right,
                rows: right_rows,
                hist: right_hist,
                grad: rg,
                hess: rh,
                count: rn,
                depth: p.depth + 1,
            });
        }
        level = next;
    }
    Tree {
        nodes,
        depth: depth_reached as u32,
    }
}
