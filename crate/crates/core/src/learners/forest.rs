use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cart::{grow_cart, CartParams, SplitMode};
use super::tree::ClassTree;
use super::{check_training_input, ordinals, LearnerError, Matrix, N_CLASSES};
use crate::preprocess::CsClass;
use crate::rng::stream_rng;

/// Candidate features per node as a function of the input dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// ⌈√d⌉
    Sqrt,
    /// ⌈f·d⌉
    Fraction(f64),
    /// Fixed count, capped at `d`.
    Count(usize),
    All,
}

impl MaxFeatures {
    pub fn resolve(&self, d: usize) -> usize {
        let k = match *self {
            MaxFeatures::Sqrt => (d as f64).sqrt().ceil() as usize,
            MaxFeatures::Fraction(f) => (f * d as f64).ceil() as usize,
            MaxFeatures::Count(k) => k,
            MaxFeatures::All => d,
        };
        k.clamp(1, d.max(1))
    }

    fn validate(&self) -> Result<(), LearnerError> {
        match *self {
            MaxFeatures::Fraction(f) if !(f > 0.0 && f <= 1.0) => Err(LearnerError::InvalidParams(format!(
                "max_features fraction {f} not in (0, 1]"
            ))),
            MaxFeatures::Count(0) => Err(LearnerError::InvalidParams("max_features count must be >= 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_trees: 600,
            max_depth: 10,
            min_samples_split: 10,
            min_samples_leaf: 4,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for EtParams {
    fn default() -> Self {
        EtParams {
            n_trees: 300,
            max_depth: 12,
            min_samples_split: 10,
            min_samples_leaf: 4,
            max_features: MaxFeatures::Fraction(0.8),
            bootstrap: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestKind {
    RandomForest,
    ExtraTrees,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub kind: ForestKind,
    pub dim: usize,
    pub trees: Vec<ClassTree>,
}

impl Forest {
    /// Unweighted mean of the trees' leaf distributions.
    pub fn predict_proba(&self, x: &[f64]) -> [f64; N_CLASSES] {
        let mut p = [0.0; N_CLASSES];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.leaf(x)) {
                *acc += v;
            }
        }
        let n = self.trees.len() as f64;
        p.map(|v| v / n)
    }
}

struct ForestSpec {
    kind: ForestKind,
    n_trees: usize,
    cart: CartParams,
    bootstrap: bool,
    seed: u64,
}

fn fit_forest(x: &Matrix, y: &[CsClass], spec: ForestSpec) -> Result<Forest, LearnerError> {
    check_training_input(x, y)?;
    let c = &spec.cart;
    if spec.n_trees == 0 || c.max_depth == 0 || c.min_samples_split == 0 || c.min_samples_leaf == 0 {
        return Err(LearnerError::InvalidParams(
            "tree counts, depth and sample limits must be >= 1".into(),
        ));
    }
    let labels = ordinals(y);
    let n = x.rows();
    let trees = (0..spec.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(spec.seed, t as u64);
            let rows: Vec<usize> = if spec.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_cart(x, &labels, rows, &spec.cart, &mut rng)
        })
        .collect();
    Ok(Forest {
        kind: spec.kind,
        dim: x.cols(),
        trees,
    })
}

pub fn fit_random_forest(x: &Matrix, y: &[CsClass], p: &RfParams) -> Result<Forest, LearnerError> {
    p.max_features.validate()?;
    fit_forest(
        x,
        y,
        ForestSpec {
            kind: ForestKind::RandomForest,
            n_trees: p.n_trees,
            cart: CartParams {
                max_depth: p.max_depth,
                min_samples_split: p.min_samples_split,
                min_samples_leaf: p.min_samples_leaf,
                max_features: p.max_features.resolve(x.cols()),
                split_mode: SplitMode::Exact,
            },
            bootstrap: p.bootstrap,
            seed: p.seed,
        },
    )
}

pub fn fit_extra_trees(x: &Matrix, y: &[CsClass], p: &EtParams) -> Result<Forest, LearnerError> {
    p.max_features.validate()?;
    fit_forest(
        x,
        y,
        ForestSpec {
            kind: ForestKind::ExtraTrees,
            n_trees: p.n_trees,
            cart: CartParams {
                max_depth: p.max_depth,
                min_samples_split: p.min_samples_split,
                min_samples_leaf: p.min_samples_leaf,
                max_features: p.max_features.resolve(x.cols()),
                split_mode: SplitMode::Random,
            },
            bootstrap: p.bootstrap,
            seed: p.seed,
        },
    )
}
