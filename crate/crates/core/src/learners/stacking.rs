use serde::{Deserialize, Serialize};

use super::forest::{fit_extra_trees, fit_random_forest, EtParams, Forest, RfParams};
use super::gbt::{fit_gbt, Gbt, GbtParams};
use super::logreg::{fit_logreg, LogReg, LogRegParams};
use super::{check_training_input, LearnerError, Matrix, N_CLASSES};
use crate::partition::stratified_kfold;
use crate::preprocess::CsClass;
use crate::rng::derive_seed;

/// Meta-feature width: three base learners times four class probabilities.
pub const META_DIM: usize = 3 * N_CLASSES;

/// Base learner seeds are derived from `seed`; their own `seed` fields are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackParams {
    pub rf: RfParams,
    pub et: EtParams,
    pub gbt: GbtParams,
    pub oof_folds: usize,
    pub meta: LogRegParams,
    pub seed: u64,
}

impl Default for StackParams {
    fn default() -> Self {
        StackParams {
            rf: RfParams::default(),
            et: EtParams::default(),
            gbt: GbtParams::default(),
            oof_folds: 5,
            meta: LogRegParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    pub dim: usize,
    pub rf: Forest,
    pub et: Forest,
    pub gbt: Gbt,
    pub meta: LogReg,
}

struct Bases {
    rf: Forest,
    et: Forest,
    gbt: Gbt,
}

fn meta_features(rf: &Forest, et: &Forest, gbt: &Gbt, x: &[f64]) -> [f64; META_DIM] {
    let mut z = [0.0; META_DIM];
    z[..N_CLASSES].copy_from_slice(&rf.predict_proba(x));
    z[N_CLASSES..2 * N_CLASSES].copy_from_slice(&et.predict_proba(x));
    z[2 * N_CLASSES..].copy_from_slice(&gbt.predict_proba(x));
    z
}

impl Stack {
    pub fn meta_features(&self, x: &[f64]) -> [f64; META_DIM] {
        meta_features(&self.rf, &self.et, &self.gbt, x)
    }

    pub fn predict_proba(&self, x: &[f64]) -> [f64; N_CLASSES] {
        self.meta.predict_proba(&self.meta_features(x))
    }
}

fn fit_bases(x: &Matrix, y: &[CsClass], p: &StackParams, seed: u64) -> Result<Bases, LearnerError> {
    let rf = RfParams {
        seed: derive_seed(seed, 0),
        ..p.rf.clone()
    };
    let et = EtParams {
        seed: derive_seed(seed, 1),
        ..p.et.clone()
    };
    let gbt = GbtParams {
        seed: derive_seed(seed, 2),
        ..p.gbt.clone()
    };
    let (rf, (et, gbt)) = rayon::join(
        || fit_random_forest(x, y, &rf),
        || rayon::join(|| fit_extra_trees(x, y, &et), || fit_gbt(x, y, &gbt)),
    );
    Ok(Bases {
        rf: rf?,
        et: et?,
        gbt: gbt?,
    })
}

/// Out-of-fold base probabilities train the meta learner; the bases are then
/// refit on every row.
pub fn fit_stacking(x: &Matrix, y: &[CsClass], p: &StackParams) -> Result<Stack, LearnerError> {
    check_training_input(x, y)?;
    if p.oof_folds < 2 {
        return Err(LearnerError::InvalidParams("oof_folds must be >= 2".into()));
    }
    if x.rows() < 2 * p.oof_folds {
        return Err(LearnerError::InsufficientSamples {
            needed: 2 * p.oof_folds,
            actual: x.rows(),
        });
    }
    let plan = stratified_kfold(y, p.oof_folds, p.seed).map_err(|e| LearnerError::InvalidParams(e.to_string()))?;
    let mut meta_rows = vec![[0.0; META_DIM]; x.rows()];
    for (k, held_out) in plan.folds.iter().enumerate() {
        let train = plan.complement(k);
        let xt = x.select_rows(&train);
        let yt: Vec<CsClass> = train.iter().map(|&i| y[i]).collect();
        let b = fit_bases(&xt, &yt, p, derive_seed(p.seed, k as u64 + 1))?;
        for &i in held_out {
            meta_rows[i] = meta_features(&b.rf, &b.et, &b.gbt, x.row(i));
        }
    }
    let meta_x = Matrix::from_rows(&meta_rows)?;
    let meta = fit_logreg(&meta_x, y, &p.meta)?;
    let b = fit_bases(x, y, p, derive_seed(p.seed, 0))?;
    Ok(Stack {
        dim: x.cols(),
        rf: b.rf,
        et: b.et,
        gbt: b.gbt,
        meta,
    })
}
