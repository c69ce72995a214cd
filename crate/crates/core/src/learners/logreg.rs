use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{check_training_input, ordinals, softmax, LearnerError, Matrix, N_CLASSES};
use crate::preprocess::CsClass;

const MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogRegParams {
    pub max_iterations: usize,
    /// Stop once the gradient's max-norm falls to this value.
    pub tolerance: f64,
    /// Ridge penalty on weights (not intercepts); 0 disables it.
    pub l2: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        LogRegParams {
            max_iterations: 2000,
            tolerance: 1e-6,
            l2: 0.0,
        }
    }
}

/// Softmax regression; row `c` of `weights` is `[w_c1 .. w_cd, b_c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
}

impl LogReg {
    pub fn zeros(dim: usize) -> Self {
        LogReg {
            dim,
            weights: vec![0.0; N_CLASSES * (dim + 1)],
            iterations: 0,
            converged: false,
            final_loss: (N_CLASSES as f64).ln(),
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> [f64; N_CLASSES] {
        softmax(&logits(&self.weights, x))
    }
}

fn logits(w: &[f64], x: &[f64]) -> [f64; N_CLASSES] {
    let stride = x.len() + 1;
    let mut z = [0.0; N_CLASSES];
    for (c, zc) in z.iter_mut().enumerate() {
        let row = &w[c * stride..(c + 1) * stride];
        *zc = row[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[x.len()];
    }
    z
}

struct Objective<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    l2: f64,
}

impl Objective<'_> {
    /// Mean cross-entropy plus ridge term, and its gradient.
    fn eval(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.x.cols();
        let stride = d + 1;
        let n = self.x.rows() as f64;
        grad.fill(0.0);
        let mut loss = 0.0;
        for (row, &yi) in self.x.iter_rows().zip(self.y) {
            let z = logits(w, row);
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
            loss += lse - z[yi];
            for c in 0..N_CLASSES {
                let r = (z[c] - lse).exp() - f64::from(u8::from(c == yi));
                let g = &mut grad[c * stride..(c + 1) * stride];
                for (gj, xj) in g[..d].iter_mut().zip(row) {
                    *gj += r * xj;
                }
                g[d] += r;
            }
        }
        loss /= n;
        for g in grad.iter_mut() {
            *g /= n;
        }
        if self.l2 > 0.0 {
            for c in 0..N_CLASSES {
                for j in 0..d {
                    let k = c * stride + j;
                    loss += 0.5 * self.l2 * w[k] * w[k];
                    grad[k] += self.l2 * w[k];
                }
            }
        }
        loss
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// L-BFGS with Armijo backtracking from the zero vector. Returns the fitted
/// model and the loss after every accepted step.
pub(crate) fn fit_logreg_traced(
    x: &Matrix,
    y: &[CsClass],
    p: &LogRegParams,
) -> Result<(LogReg, Vec<f64>), LearnerError> {
    check_training_input(x, y)?;
    if !(p.tolerance >= 0.0 && p.l2 >= 0.0) {
        return Err(LearnerError::InvalidParams("tolerance and l2 must be >= 0".into()));
    }
    let labels = ordinals(y);
    let obj = Objective {
        x,
        y: &labels,
        l2: p.l2,
    };
    let dim = N_CLASSES * (x.cols() + 1);
    let mut w = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut f = obj.eval(&w, &mut g);
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut converged = false;
    let mut iterations = 0;
    let mut w_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];

    while iterations < p.max_iterations {
        if max_norm(&g) <= p.tolerance {
            converged = true;
            break;
        }
        let mut dir = two_loop(&g, &history);
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if history.is_empty() {
            1.0 / max_norm(&g).max(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for ((wn, wi), di) in w_new.iter_mut().zip(&w).zip(&dir) {
                *wn = wi + step * di;
            }
            let f_new = obj.eval(&w_new, &mut g_new);
            if f_new <= f + ARMIJO_C1 * step * slope {
                accepted = Some(f_new);
                break;
            }
            step *= 0.5;
        }
        let Some(f_new) = accepted else {
            log::debug!("line search stalled after {iterations} iterations");
            break;
        };
        let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, yv, 1.0 / sy));
        }
        std::mem::swap(&mut w, &mut w_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        trace.push(f);
        iterations += 1;
    }
    if !converged && max_norm(&g) <= p.tolerance {
        converged = true;
    }
    if !converged {
        log::info!(
            "logistic regression stopped after {iterations} iterations with gradient norm {:.3e}",
            max_norm(&g)
        );
    }
    Ok((
        LogReg {
            dim: x.cols(),
            weights: w,
            iterations,
            converged,
            final_loss: f,
        },
        trace,
    ))
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

pub fn fit_logreg(x: &Matrix, y: &[CsClass], p: &LogRegParams) -> Result<LogReg, LearnerError> {
    fit_logreg_traced(x, y, p).map(|(m, _)| m)
}

/// Unregularized softmax regression.
pub fn fit_multinomial_logreg(
    x: &Matrix,
    y: &[CsClass],
    max_iterations: usize,
    tolerance: f64,
) -> Result<LogReg, LearnerError> {
    fit_logreg(
        x,
        y,
        &LogRegParams {
            max_iterations,
            tolerance,
            l2: 0.0,
        },
    )
}
