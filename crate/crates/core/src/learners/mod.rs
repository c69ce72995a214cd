//! Four-class tree ensembles built from scratch: CART, Random Forest, Extra
//! Trees, softmax gradient boosting, and probability stacking with a
//! multinomial logistic meta learner.

mod cart;
mod forest;
mod gbt;
mod logreg;
mod matrix;
mod stacking;
mod tree;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::CsClass;

pub use cart::{fit_cart, CartParams, SplitMode};
pub use forest::{fit_extra_trees, fit_random_forest, EtParams, Forest, ForestKind, MaxFeatures, RfParams};
pub use gbt::{fit_gbt, Gbt, GbtParams};
pub use logreg::{fit_logreg, fit_multinomial_logreg, LogReg, LogRegParams};
pub use matrix::Matrix;
pub use stacking::{fit_stacking, Stack, StackParams, META_DIM};
pub use tree::{ClassTree, RegressionTree, Tree, TreeNode};

pub const N_CLASSES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("no training rows")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("need at least {needed} rows, got {actual}")]
    InsufficientSamples { needed: usize, actual: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

pub(crate) fn check_training_input(x: &Matrix, y: &[CsClass]) -> Result<(), LearnerError> {
    if x.rows() == 0 {
        return Err(LearnerError::EmptyInput);
    }
    if y.len() != x.rows() {
        return Err(LearnerError::DimensionMismatch {
            expected: x.rows(),
            actual: y.len(),
        });
    }
    x.check_finite()
}

pub(crate) fn ordinals(y: &[CsClass]) -> Vec<usize> {
    y.iter().map(|c| c.ordinal()).collect()
}

pub(crate) fn softmax(z: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Et,
    Gbt,
    Stack,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Rf, ModelKind::Et, ModelKind::Gbt, ModelKind::Stack];

    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Rf => "Random Forest",
            ModelKind::Et => "Extra Trees",
            ModelKind::Gbt => "XGBoost",
            ModelKind::Stack => "Stacking",
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Et => "et",
            ModelKind::Gbt => "gbt",
            ModelKind::Stack => "stack",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = LearnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.key().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| LearnerError::InvalidParams(format!("unknown model kind `{s}`")))
    }
}

/// Meta learner settings for stacking; base learners come from the sibling
/// `rf`, `et` and `gbt` sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackConfig {
    pub oof_folds: usize,
    pub meta: LogRegParams,
}

impl Default for StackConfig {
    fn default() -> Self {
        let p = StackParams::default();
        StackConfig {
            oof_folds: p.oof_folds,
            meta: p.meta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub rf: RfParams,
    pub et: EtParams,
    pub gbt: GbtParams,
    pub stack: StackConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Gbt,
            rf: RfParams::default(),
            et: EtParams::default(),
            gbt: GbtParams::default(),
            stack: StackConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn stack_params(&self, seed: u64) -> StackParams {
        StackParams {
            rf: self.rf.clone(),
            et: self.et.clone(),
            gbt: self.gbt.clone(),
            oof_folds: self.stack.oof_folds,
            meta: self.stack.meta.clone(),
            seed,
        }
    }

    /// Fits `kind` with these hyperparameters; `seed` replaces the configured
    /// learner seed.
    pub fn fit(&self, kind: ModelKind, x: &Matrix, y: &[CsClass], seed: u64) -> Result<Model, LearnerError> {
        Ok(match kind {
            ModelKind::Rf => Model::Forest(fit_random_forest(
                x,
                y,
                &RfParams {
                    seed,
                    ..self.rf.clone()
                },
            )?),
            ModelKind::Et => Model::Forest(fit_extra_trees(
                x,
                y,
                &EtParams {
                    seed,
                    ..self.et.clone()
                },
            )?),
            ModelKind::Gbt => Model::Gbt(fit_gbt(
                x,
                y,
                &GbtParams {
                    seed,
                    ..self.gbt.clone()
                },
            )?),
            ModelKind::Stack => Model::Stack(Box::new(fit_stacking(x, y, &self.stack_params(seed))?)),
        })
    }
}

/// A trained four-class model; immutable and safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Forest(Forest),
    Gbt(Gbt),
    LogReg(LogReg),
    Stack(Box<Stack>),
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Forest(m) => m.dim,
            Model::Gbt(m) => m.dim,
            Model::LogReg(m) => m.dim,
            Model::Stack(m) => m.dim,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Model::Forest(f) if f.kind == ForestKind::RandomForest => ModelKind::Rf.label(),
            Model::Forest(_) => ModelKind::Et.label(),
            Model::Gbt(_) => ModelKind::Gbt.label(),
            Model::LogReg(_) => "Logistic Regression",
            Model::Stack(_) => ModelKind::Stack.label(),
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; N_CLASSES], LearnerError> {
        if x.len() != self.dim() {
            return Err(LearnerError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(match self {
            Model::Forest(m) => m.predict_proba(x),
            Model::Gbt(m) => m.predict_proba(x),
            Model::LogReg(m) => m.predict_proba(x),
            Model::Stack(m) => m.predict_proba(x),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<CsClass, LearnerError> {
        let p = self.predict_proba(x)?;
        Ok(CsClass::from_ordinal(argmax(&p)).expect("argmax is below N_CLASSES"))
    }

    /// Row-wise predictions, in row order.
    pub fn predict_rows(&self, x: &Matrix) -> Result<Vec<CsClass>, LearnerError> {
        (0..x.rows()).into_par_iter().map(|i| self.predict(x.row(i))).collect()
    }

    pub fn predict_proba_rows(&self, x: &Matrix) -> Result<Vec<[f64; N_CLASSES]>, LearnerError> {
        (0..x.rows())
            .into_par_iter()
            .map(|i| self.predict_proba(x.row(i)))
            .collect()
    }
}
