use serde::{Deserialize, Serialize};

use super::EvaluationError;
use crate::learners::N_CLASSES;
use crate::preprocess::CsClass;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: CsClass, predicted: CsClass) {
        self.counts[truth.ordinal()][predicted.ordinal()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }
}

pub fn confusion_matrix(preds: &[CsClass], labels: &[CsClass]) -> Result<ConfusionMatrix, EvaluationError> {
    if preds.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(labels) {
        cm.add(t, p);
    }
    Ok(cm)
}

/// Rates are in `[0, 1]`; timing fields are filled in by the caller.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: [f64; N_CLASSES],
    pub recall: [f64; N_CLASSES],
    pub f1: [f64; N_CLASSES],
    pub macro_f1: f64,
    pub train_time_s: f64,
    pub inference_time_ms_per_sample: f64,
}

impl MetricsReport {
    pub fn without_timing(&self) -> MetricsReport {
        MetricsReport {
            train_time_s: 0.0,
            inference_time_ms_per_sample: 0.0,
            ..*self
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Any 0/0 rate is reported as 0.
pub fn classification_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let c = &cm.counts;
    let total = cm.total() as f64;
    let mut m = MetricsReport::default();
    let mut trace = 0;
    for k in 0..N_CLASSES {
        let tp = c[k][k] as f64;
        trace += c[k][k];
        let col: u64 = (0..N_CLASSES).map(|r| c[r][k]).sum();
        let row: u64 = c[k].iter().sum();
        m.precision[k] = ratio(tp, col as f64);
        m.recall[k] = ratio(tp, row as f64);
        m.f1[k] = ratio(2.0 * m.precision[k] * m.recall[k], m.precision[k] + m.recall[k]);
    }
    m.accuracy = ratio(trace as f64, total);
    m.macro_f1 = m.f1.iter().sum::<f64>() / N_CLASSES as f64;
    m
}
