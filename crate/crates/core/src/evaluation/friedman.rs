use serde::{Deserialize, Serialize};

use super::stats::chi2_survival;
use super::EvaluationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    /// Blocks (folds).
    pub n: usize,
    /// Treatments (models).
    pub k: usize,
    pub rank_matrix: Vec<Vec<f64>>,
    pub mean_ranks: Vec<f64>,
    pub chi2: f64,
    pub p_value: f64,
    pub dof: usize,
}

/// Ranks 1..k with 1 = best; tied values share the mean of their positions.
pub fn rank_row(scores: &[f64], higher_is_better: bool) -> Vec<f64> {
    let k = scores.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        if higher_is_better {
            o.reverse()
        } else {
            o
        }
    });
    let mut ranks = vec![0.0; k];
    let mut i = 0;
    while i < k {
        let mut j = i + 1;
        while j < k && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share the mean of ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

/// `scores[fold][model]`.
pub fn friedman_test(scores: &[Vec<f64>], higher_is_better: bool) -> Result<FriedmanResult, EvaluationError> {
    let n = scores.len();
    let k = scores.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(EvaluationError::DegenerateInput { n, k });
    }
    if let Some(bad) = scores.iter().find(|r| r.len() != k) {
        return Err(EvaluationError::LengthMismatch {
            left: k,
            right: bad.len(),
        });
    }
    let rank_matrix: Vec<Vec<f64>> = scores.iter().map(|r| rank_row(r, higher_is_better)).collect();
    let mean_ranks: Vec<f64> = (0..k)
        .map(|j| rank_matrix.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let (nf, kf) = (n as f64, k as f64);
    let sum_sq: f64 = mean_ranks.iter().map(|r| r * r).sum();
    let chi2 = (12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0)).max(0.0);
    let dof = k - 1;
    Ok(FriedmanResult {
        n,
        k,
        rank_matrix,
        mean_ranks,
        chi2,
        p_value: chi2_survival(chi2, dof),
        dof,
    })
}
