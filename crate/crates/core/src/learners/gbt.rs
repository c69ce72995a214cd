use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, Tree, TreeNode};
use super::{check_training_input, ordinals, softmax, LearnerError, Matrix, N_CLASSES};
use crate::preprocess::CsClass;
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Bernoulli row-sampling rate per class tree.
    pub subsample: f64,
    /// Fraction of features per tree, rounded down, at least one.
    pub colsample_bytree: f64,
    /// Minimum split gain.
    pub gamma: f64,
    /// L1 penalty on leaf weights.
    pub alpha: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_rounds: 400,
            max_depth: 6,
            learning_rate: 0.05,
            subsample: 0.8,
            colsample_bytree: 0.8,
            gamma: 0.1,
            alpha: 0.1,
            lambda: 1.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::InvalidParams(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return bad("colsample_bytree must be in (0, 1]");
        }
        if !(self.gamma >= 0.0 && self.alpha >= 0.0 && self.lambda >= 0.0 && self.min_child_weight >= 0.0) {
            return bad("gamma, alpha, lambda and min_child_weight must be >= 0");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be >= 1");
        }
        Ok(())
    }
}

/// Softmax boosting model; trees are stored round-major, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbt {
    pub dim: usize,
    pub base_score: [f64; N_CLASSES],
    /// Leaf values already include the learning rate.
    pub trees: Vec<RegressionTree>,
}

impl Gbt {
    pub fn rounds(&self) -> usize {
        self.trees.len() / N_CLASSES
    }

    pub fn scores(&self, x: &[f64]) -> [f64; N_CLASSES] {
        let mut s = self.base_score;
        for (k, t) in self.trees.iter().enumerate() {
            s[k % N_CLASSES] += t.leaf(x);
        }
        s
    }

    pub fn predict_proba(&self, x: &[f64]) -> [f64; N_CLASSES] {
        softmax(&self.scores(x))
    }
}

pub fn fit_gbt(x: &Matrix, y: &[CsClass], p: &GbtParams) -> Result<Gbt, LearnerError> {
    fit_gbt_traced(x, y, p, None)
}

/// Mean multiclass log-loss.
pub(crate) fn log_loss(scores: &[[f64; N_CLASSES]], y: &[usize]) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(s, &c)| -softmax(s)[c].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / y.len() as f64
}

pub(crate) fn fit_gbt_traced(
    x: &Matrix,
    y: &[CsClass],
    p: &GbtParams,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<Gbt, LearnerError> {
    check_training_input(x, y)?;
    p.validate()?;
    let labels = ordinals(y);
    let (n, d) = (x.rows(), x.cols());
    let order: Vec<Vec<u32>> = (0..d)
        .into_par_iter()
        .map(|f| {
            let mut o: Vec<u32> = (0..n as u32).collect();
            o.sort_by(|&a, &b| x.get(a as usize, f).total_cmp(&x.get(b as usize, f)));
            o
        })
        .collect();
    let n_cols = ((p.colsample_bytree * d as f64).floor() as usize).clamp(1, d.max(1));
    let base_score = [0.0; N_CLASSES];
    let mut scores = vec![base_score; n];
    let mut trees = Vec::with_capacity(p.n_rounds * N_CLASSES);
    if let Some(t) = trace.as_deref_mut() {
        t.push(log_loss(&scores, &labels));
    }
    for round in 0..p.n_rounds {
        let probs: Vec<[f64; N_CLASSES]> = scores.iter().map(softmax).collect();
        let round_trees: Vec<RegressionTree> = (0..N_CLASSES)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(p.seed, (round * N_CLASSES + c) as u64);
                let in_sample: Vec<bool> = if p.subsample < 1.0 {
                    (0..n).map(|_| rng.random::<f64>() < p.subsample).collect()
                } else {
                    vec![true; n]
                };
                let mut features = index::sample(&mut rng, d, n_cols).into_vec();
                features.sort_unstable();
                let mut grad = vec![0.0; n];
                let mut hess = vec![0.0; n];
                for i in 0..n {
                    let pc = probs[i][c];
                    grad[i] = pc - f64::from(u8::from(labels[i] == c));
                    hess[i] = pc * (1.0 - pc);
                }
                grow_regression_tree(x, &order, &features, &grad, &hess, &in_sample, p)
            })
            .collect();
        for (i, s) in scores.iter_mut().enumerate() {
            for (c, t) in round_trees.iter().enumerate() {
                s[c] += t.leaf(x.row(i));
            }
        }
        trees.extend(round_trees);
        if let Some(t) = trace.as_deref_mut() {
            t.push(log_loss(&scores, &labels));
        }
    }
    Ok(Gbt {
        dim: d,
        base_score,
        trees,
    })
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn leaf_weight(g: f64, h: f64, p: &GbtParams) -> f64 {
    let shrunk = (g.abs() - p.alpha).max(0.0);
    -g.signum() * shrunk / (h + p.lambda) * p.learning_rate
}

/// Exact greedy, level-wise growth over presorted feature orders.
fn grow_regression_tree(
    x: &Matrix,
    order: &[Vec<u32>],
    features: &[usize],
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    p: &GbtParams,
) -> RegressionTree {
    let n = x.rows();
    let mut node_of: Vec<u32> = (0..n).map(|i| if in_sample[i] { 0 } else { NONE }).collect();
    let (mut g0, mut h0) = (0.0, 0.0);
    for i in (0..n).filter(|&i| in_sample[i]) {
        g0 += grad[i];
        h0 += hess[i];
    }
    let mut nodes: Vec<TreeNode<f64>> = vec![TreeNode::Leaf { value: 0.0 }];
    let mut sums: Vec<(f64, f64)> = vec![(g0, h0)];
    let mut frontier: Vec<u32> = vec![0];
    let score = |g: f64, h: f64| g * g / (h + p.lambda);

    for _depth in 0..p.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot_of = vec![NONE; nodes.len()];
        for (s, &nd) in frontier.iter().enumerate() {
            slot_of[nd as usize] = s as u32;
        }
        let m = frontier.len();
        let mut best: Vec<Option<Candidate>> = vec![None; m];
        let mut gl = vec![0.0; m];
        let mut hl = vec![0.0; m];
        let mut last = vec![f64::NAN; m];
        for &f in features {
            gl.fill(0.0);
            hl.fill(0.0);
            last.fill(f64::NAN);
            for &i in &order[f] {
                let i = i as usize;
                let nd = node_of[i];
                if nd == NONE {
                    continue;
                }
                let s = slot_of[nd as usize];
                if s == NONE {
                    continue;
                }
                let s = s as usize;
                let v = x.get(i, f);
                let lx = last[s];
                if lx < v {
                    let (g, h) = sums[nd as usize];
                    let (gr, hr) = (g - gl[s], h - hl[s]);
                    if hl[s] >= p.min_child_weight && hr >= p.min_child_weight {
                        let gain = 0.5 * (score(gl[s], hl[s]) + score(gr, hr) - score(g, h)) - p.gamma;
                        if gain > 0.0 && best[s].is_none_or(|b| gain > b.gain) {
                            let mut threshold = 0.5 * (lx + v);
                            if threshold <= lx {
                                threshold = v;
                            }
                            best[s] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold,
                            });
                        }
                    }
                }
                gl[s] += grad[i];
                hl[s] += hess[i];
                last[s] = v;
            }
        }
        let mut next = Vec::new();
        let mut child_of = vec![(NONE, NONE); m];
        for (s, &nd) in frontier.iter().enumerate() {
            let nd = nd as usize;
            match best[s] {
                Some(c) => {
                    let l = nodes.len();
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    sums.push((0.0, 0.0));
                    sums.push((0.0, 0.0));
                    nodes[nd] = TreeNode::Internal {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: l,
                        right: l + 1,
                    };
                    child_of[s] = (l as u32, l as u32 + 1);
                    next.push(l as u32);
                    next.push(l as u32 + 1);
                }
                None => {
                    let (g, h) = sums[nd];
                    nodes[nd] = TreeNode::Leaf {
                        value: leaf_weight(g, h, p),
                    };
                }
            }
        }
        for i in 0..n {
            let nd = node_of[i];
            if nd == NONE {
                continue;
            }
            let s = slot_of[nd as usize];
            if s == NONE {
                continue;
            }
            let (l, r) = child_of[s as usize];
            if l == NONE {
                node_of[i] = NONE;
                continue;
            }
            let TreeNode::Internal { feature, threshold, .. } = nodes[nd as usize] else {
                unreachable!("split node must be internal")
            };
            let child = if x.get(i, feature) < threshold { l } else { r };
            node_of[i] = child;
            let cs = &mut sums[child as usize];
            cs.0 += grad[i];
            cs.1 += hess[i];
        }
        frontier = next;
    }
    for nd in frontier {
        let (g, h) = sums[nd as usize];
        nodes[nd as usize] = TreeNode::Leaf {
            value: leaf_weight(g, h, p),
        };
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::argmax;
    use crate::learners::test_data::blobs;

    fn exact_params() -> GbtParams {
        GbtParams {
            subsample: 1.0,
            colsample_bytree: 1.0,
            gamma: 0.0,
            alpha: 0.0,
            ..GbtParams::default()
        }
    }

    #[test]
    fn zero_rounds_predict_uniform() {
        let (x, y) = blobs(40, 1.0, 0);
        let p = GbtParams {
            n_rounds: 0,
            ..GbtParams::default()
        };
        let m = fit_gbt(&x, &y, &p).unwrap();
        assert_eq!(m.predict_proba(&[3.0, -1.0]), [0.25; 4]);
        assert_eq!(argmax(&m.predict_proba(&[0.0, 0.0])), 0);
    }

    #[test]
    fn threshold_separable_two_class_data_is_fit_exactly() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 10.0]).collect();
        let y: Vec<CsClass> = (0..100)
            .map(|i| if i < 50 { CsClass::Low } else { CsClass::High })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let p = GbtParams {
            n_rounds: 50,
            ..exact_params()
        };
        let m = fit_gbt(&x, &y, &p).unwrap();
        for (r, c) in x.iter_rows().zip(&y) {
            assert_eq!(argmax(&m.predict_proba(r)), c.ordinal());
        }
    }

    #[test]
    fn training_loss_never_increases() {
        let (x, y) = blobs(200, 1.0, 5);
        let p = GbtParams {
            n_rounds: 60,
            ..exact_params()
        };
        let mut trace = Vec::new();
        fit_gbt_traced(&x, &y, &p, Some(&mut trace)).unwrap();
        assert_eq!(trace.len(), 61);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
        assert!(trace[60] < trace[0]);
    }

    #[test]
    fn defaults_grow_bounded_trees_deterministically() {
        let (x, y) = blobs(120, 2.0, 9);
        let p = GbtParams {
            n_rounds: 40,
            seed: 4,
            ..GbtParams::default()
        };
        assert_eq!(GbtParams::default().n_rounds, 400);
        let a = fit_gbt(&x, &y, &p).unwrap();
        let b = fit_gbt(&x, &y, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rounds(), 40);
        assert!(a.trees.iter().all(|t| t.depth() <= 6));
        for r in x.iter_rows() {
            let s: f64 = a.predict_proba(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn leaf_weight_soft_thresholds_the_gradient() {
        let p = GbtParams {
            alpha: 1.0,
            lambda: 1.0,
            learning_rate: 1.0,
            ..GbtParams::default()
        };
        assert_eq!(leaf_weight(0.5, 3.0, &p), 0.0);
        assert_eq!(leaf_weight(3.0, 3.0, &p), -0.5);
        assert_eq!(leaf_weight(-3.0, 3.0, &p), 0.5);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let (x, y) = blobs(10, 1.0, 0);
        for p in [
            GbtParams {
                learning_rate: 0.0,
                ..GbtParams::default()
            },
            GbtParams {
                subsample: 0.0,
                ..GbtParams::default()
            },
            GbtParams {
                colsample_bytree: 1.5,
                ..GbtParams::default()
            },
            GbtParams {
                gamma: -1.0,
                ..GbtParams::default()
            },
        ] {
            assert!(matches!(fit_gbt(&x, &y, &p), Err(LearnerError::InvalidParams(_))));
        }
    }
}
