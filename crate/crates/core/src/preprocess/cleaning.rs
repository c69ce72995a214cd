use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::dataio::Frame;
use crate::features::FEATURE_DIM;

/// MAD to standard deviation under normality.
const MAD_SCALE: f64 = 1.482_602_218_505_602;

/// Per-session cleaning applied column by column, in order: linear
/// interpolation of non-finite cells, clipping at `clip_sigma` robust standard
/// deviations around the median, then a centred moving median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleaningPolicy {
    pub clip_sigma: f64,
    /// Odd window width in frames; 1 disables smoothing.
    pub smooth_window: usize,
    pub impute: bool,
}

impl Default for CleaningPolicy {
    fn default() -> Self {
        CleaningPolicy {
            clip_sigma: 4.0,
            smooth_window: 5,
            impute: true,
        }
    }
}

impl CleaningPolicy {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(self.clip_sigma > 0.0) {
            return Err(PreprocessError::InvalidPolicy("clip_sigma must be > 0".into()));
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return Err(PreprocessError::InvalidPolicy(
                "smooth_window must be odd and >= 1".into(),
            ));
        }
        Ok(())
    }
}

pub fn clean_frames(frames: &[Frame], policy: &CleaningPolicy) -> Result<Vec<Frame>, PreprocessError> {
    policy.validate()?;
    let mut out = frames.to_vec();
    if frames.is_empty() {
        return Ok(out);
    }
    let times: Vec<f64> = frames.iter().map(|f| f.t).collect();
    let mut column = vec![0.0; frames.len()];
    for feature in 0..FEATURE_DIM {
        for (c, f) in column.iter_mut().zip(frames) {
            *c = f.features[feature];
        }
        if !column.iter().any(|v| v.is_finite()) {
            return Err(PreprocessError::AllNonFinite {
                session: String::new(),
                feature,
            });
        }
        if policy.impute {
            interpolate_non_finite(&times, &mut column);
        }
        clip_robust(&mut column, policy.clip_sigma);
        if policy.smooth_window > 1 {
            column = moving_median(&column, policy.smooth_window);
        }
        for (f, v) in out.iter_mut().zip(&column) {
            f.features[feature] = *v;
        }
    }
    Ok(out)
}

/// Linear interpolation in time between the nearest finite neighbours; runs
/// at either end take the nearest finite value.
fn interpolate_non_finite(times: &[f64], values: &mut [f64]) {
    let finite: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_finite()).collect();
    let (Some(&first), Some(&last)) = (finite.first(), finite.last()) else {
        return;
    };
    let head = values[first];
    for v in values[..first].iter_mut() {
        *v = head;
    }
    let fill = values[last];
    for v in values[last + 1..].iter_mut() {
        *v = fill;
    }
    for pair in finite.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a < 2 {
            continue;
        }
        let (ta, tb) = (times[a], times[b]);
        let (va, vb) = (values[a], values[b]);
        for i in a + 1..b {
            let w = if tb > ta { (times[i] - ta) / (tb - ta) } else { 0.5 };
            values[i] = va + w * (vb - va);
        }
    }
}

fn median_of(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median and MAD-based standard deviation of the finite values.
pub(crate) fn robust_center_scale(values: &[f64]) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let med = median_of(&v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    Some((med, MAD_SCALE * median_of(&dev)))
}

fn clip_robust(values: &mut [f64], k: f64) {
    let Some((med, scale)) = robust_center_scale(values) else {
        return;
    };
    if scale <= 0.0 {
        return;
    }
    let (lo, hi) = (med - k * scale, med + k * scale);
    for v in values.iter_mut().filter(|v| v.is_finite()) {
        *v = v.clamp(lo, hi);
    }
}

/// Centred moving median; near the ends the window shrinks symmetrically so
/// it always holds an odd number of cells. Non-finite cells are ignored.
fn moving_median(values: &[f64], width: usize) -> Vec<f64> {
    let n = values.len();
    let half = width / 2;
    let mut buf = Vec::with_capacity(width);
    (0..n)
        .map(|i| {
            let r = half.min(i).min(n - 1 - i);
            buf.clear();
            buf.extend(values[i - r..=i + r].iter().copied().filter(|v| v.is_finite()));
            if buf.is_empty() {
                return values[i];
            }
            buf.sort_by(f64::total_cmp);
            median_of(&buf)
        })
        .collect()
}
