use serde::{Deserialize, Serialize};

use super::{PreprocessError, WindowSample};

/// Per-feature z-scoring fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub epsilon: f64,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            sd: vec![1.0; dim],
            epsilon: 1e-8,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_in_place(&self, row: &mut [f64]) -> Result<(), PreprocessError> {
        if row.len() != self.dim() {
            return Err(PreprocessError::DimensionMismatch {
                expected: self.dim(),
                actual: row.len(),
            });
        }
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
            *x = (*x - m) / s;
        }
        Ok(())
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>, PreprocessError> {
        let mut out = row.to_vec();
        self.transform_in_place(&mut out)?;
        Ok(out)
    }

    pub fn apply_to_windows(&self, windows: &[WindowSample]) -> Result<Vec<WindowSample>, PreprocessError> {
        windows
            .iter()
            .map(|w| {
                Ok(WindowSample {
                    features: self.transform(&w.features)?,
                    ..w.clone()
                })
            })
            .collect()
    }
}

/// Population mean and standard deviation per column; standard deviations
/// below `1e-8` are replaced by 1.
pub fn fit_standardizer<'a, I>(rows: I) -> Result<Standardizer, PreprocessError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let rows: Vec<&[f64]> = rows.into_iter().collect();
    if rows.len() < 2 {
        return Err(PreprocessError::TooFewSamples(rows.len()));
    }
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in &rows {
        if r.len() != dim {
            return Err(PreprocessError::DimensionMismatch {
                expected: dim,
                actual: r.len(),
            });
        }
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for r in &rows {
        for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let epsilon = 1e-8;
    let sd = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s < epsilon {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok(Standardizer { mean, sd, epsilon })
}

pub fn apply_standardizer(s: &Standardizer, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PreprocessError> {
    rows.iter().map(|r| s.transform(r)).collect()
}
