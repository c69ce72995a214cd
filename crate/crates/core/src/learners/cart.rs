use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{ClassTree, Tree, TreeNode};
use super::{check_training_input, ordinals, LearnerError, Matrix, N_CLASSES};
use crate::preprocess::CsClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Scan midpoints between consecutive distinct values.
    Exact,
    /// One uniform threshold per candidate feature within the node's range.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per node; clamped to `1..=d`.
    pub max_features: usize,
    pub split_mode: SplitMode,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            max_depth: usize::MAX,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: usize::MAX,
            split_mode: SplitMode::Exact,
        }
    }
}

/// Gini classification tree on every row of `x`.
pub fn fit_cart<R: Rng>(
    x: &Matrix,
    y: &[CsClass],
    params: &CartParams,
    rng: &mut R,
) -> Result<ClassTree, LearnerError> {
    check_training_input(x, y)?;
    let labels = ordinals(y);
    Ok(grow_cart(x, &labels, (0..x.rows()).collect(), params, rng))
}

/// Grows a tree on `rows`, which may repeat indices (bootstrap draws).
pub(crate) fn grow_cart<R: Rng>(
    x: &Matrix,
    y: &[usize],
    rows: Vec<usize>,
    params: &CartParams,
    rng: &mut R,
) -> ClassTree {
    let mut b = Builder {
        x,
        y,
        p: params,
        max_features: params.max_features.clamp(1, x.cols().max(1)),
        rng,
        nodes: Vec::new(),
        buf: Vec::with_capacity(rows.len()),
    };
    b.build(rows, 0);
    Tree { nodes: b.nodes }
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

struct Builder<'a, R> {
    x: &'a Matrix,
    y: &'a [usize],
    p: &'a CartParams,
    max_features: usize,
    rng: &'a mut R,
    nodes: Vec<TreeNode<[f64; N_CLASSES]>>,
    buf: Vec<(f64, usize)>,
}

fn counts_of(y: &[usize], rows: &[usize]) -> [usize; N_CLASSES] {
    let mut c = [0; N_CLASSES];
    for &i in rows {
        c[y[i]] += 1;
    }
    c
}

/// Sum of squared class counts over the node size; maximising its sum over
/// the two children minimises weighted Gini impurity.
fn purity(c: &[usize; N_CLASSES], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    c.iter().map(|&k| (k * k) as f64).sum::<f64>() / n as f64
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = counts_of(self.y, &rows);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: [0.0; N_CLASSES],
        });
        let n = rows.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let can_split = !pure
            && depth < self.p.max_depth
            && n >= self.p.min_samples_split.max(2)
            && n >= 2 * self.p.min_samples_leaf.max(1);
        if can_split {
            if let Some(split) = self.best_split(&rows, &counts) {
                let (left, right): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| self.x.get(i, split.feature) < split.threshold);
                let l = self.build(left, depth + 1);
                let r = self.build(right, depth + 1);
                self.nodes[id] = TreeNode::Internal {
                    feature: split.feature,
                    threshold: split.threshold,
                    left: l,
                    right: r,
                };
                return id;
            }
        }
        let mut value = [0.0; N_CLASSES];
        for (v, &c) in value.iter_mut().zip(&counts) {
            *v = c as f64 / n as f64;
        }
        self.nodes[id] = TreeNode::Leaf { value };
        id
    }

    fn best_split(&mut self, rows: &[usize], counts: &[usize; N_CLASSES]) -> Option<Split> {
        let d = self.x.cols();
        let features = index::sample(self.rng, d, self.max_features).into_vec();
        let parent = purity(counts, rows.len());
        let mut best: Option<Split> = None;
        for f in features {
            let cand = match self.p.split_mode {
                SplitMode::Exact => self.exact_split(rows, counts, f),
                SplitMode::Random => self.random_split(rows, counts, f),
            };
            if let Some(c) = cand {
                // zero-gain splits are kept so interactions such as XOR are reachable
                if c.score >= parent - 1e-12 && best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn exact_split(&mut self, rows: &[usize], counts: &[usize; N_CLASSES], f: usize) -> Option<Split> {
        let n = rows.len();
        let min_leaf = self.p.min_samples_leaf.max(1);
        self.buf.clear();
        self.buf.extend(rows.iter().map(|&i| (self.x.get(i, f), self.y[i])));
        self.buf.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0usize; N_CLASSES];
        let mut best: Option<Split> = None;
        for i in 1..n {
            left[self.buf[i - 1].1] += 1;
            let (lo, hi) = (self.buf[i - 1].0, self.buf[i].0);
            if lo >= hi || i < min_leaf || n - i < min_leaf {
                continue;
            }
            let mut right = *counts;
            for c in 0..N_CLASSES {
                right[c] -= left[c];
            }
            let score = purity(&left, i) + purity(&right, n - i);
            if best.as_ref().is_none_or(|b| score > b.score) {
                let mut threshold = 0.5 * (lo + hi);
                if threshold <= lo {
                    threshold = hi;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
        best
    }

    fn random_split(&mut self, rows: &[usize], counts: &[usize; N_CLASSES], f: usize) -> Option<Split> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in rows {
            let v = self.x.get(i, f);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !(lo < hi) {
            return None;
        }
        let threshold = self.rng.random_range(lo..hi);
        let mut left = [0usize; N_CLASSES];
        let mut nl = 0;
        for &i in rows {
            if self.x.get(i, f) < threshold {
                left[self.y[i]] += 1;
                nl += 1;
            }
        }
        let n = rows.len();
        let min_leaf = self.p.min_samples_leaf.max(1);
        if nl < min_leaf || n - nl < min_leaf {
            return None;
        }
        let mut right = *counts;
        for c in 0..N_CLASSES {
            right[c] -= left[c];
        }
        Some(Split {
            feature: f,
            threshold,
            score: purity(&left, nl) + purity(&right, n - nl),
        })
    }
}
