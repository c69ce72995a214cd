//! From session streams to labelled window samples: FMS binning, segment
//! extraction, cleaning, windowing and fold-scoped standardization.

mod cleaning;
mod standardize;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Dataset, FmsReport, Frame, SegmentSpan, SessionKey};
use crate::features::FEATURE_DIM;

pub use cleaning::{clean_frames, CleaningPolicy};
pub use standardize::{apply_standardizer, fit_standardizer, Standardizer};

/// Nominal window length: 3 s at 20 Hz.
pub const WINDOW_FRAMES: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("FMS score {0} out of range [0, 10]")]
    ScoreOutOfRange(u8),
    #[error("invalid binning thresholds: {0}")]
    InvalidThresholds(String),
    #[error("invalid cleaning policy: {0}")]
    InvalidPolicy(String),
    #[error("feature {feature} has no finite value in session {session}")]
    AllNonFinite { session: String, feature: usize },
    #[error("need at least 2 samples to fit a standardizer, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Four ordinal cybersickness classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CsClass {
    #[default]
    None = 0,
    Low = 1,
    Medium = 2,
    High = 3,
}

impl CsClass {
    pub const ALL: [CsClass; 4] = [CsClass::None, CsClass::Low, CsClass::Medium, CsClass::High];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<CsClass> {
        CsClass::ALL.get(i).copied()
    }

    /// Single-letter label used in table headers.
    pub fn short(self) -> &'static str {
        match self {
            CsClass::None => "N",
            CsClass::Low => "L",
            CsClass::Medium => "M",
            CsClass::High => "H",
        }
    }
}

impl fmt::Display for CsClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CsClass::None => "None",
            CsClass::Low => "Low",
            CsClass::Medium => "Medium",
            CsClass::High => "High",
        })
    }
}

/// Inclusive upper FMS bounds of the None/Low/Medium classes; anything above
/// `medium_max` is High.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinningThresholds {
    pub none_max: u8,
    pub low_max: u8,
    pub medium_max: u8,
}

impl Default for BinningThresholds {
    fn default() -> Self {
        BinningThresholds {
            none_max: 0,
            low_max: 3,
            medium_max: 6,
        }
    }
}

impl BinningThresholds {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.none_max < self.low_max && self.low_max < self.medium_max && self.medium_max < 10 {
            Ok(())
        } else {
            Err(PreprocessError::InvalidThresholds(format!(
                "need none_max < low_max < medium_max < 10, got {}/{}/{}",
                self.none_max, self.low_max, self.medium_max
            )))
        }
    }
}

pub fn bin_fms(score: u8, th: &BinningThresholds) -> Result<CsClass, PreprocessError> {
    if score > 10 {
        return Err(PreprocessError::ScoreOutOfRange(score));
    }
    Ok(if score <= th.none_max {
        CsClass::None
    } else if score <= th.low_max {
        CsClass::Low
    } else if score <= th.medium_max {
        CsClass::Medium
    } else {
        CsClass::High
    })
}

/// Frames in `[report_t - history, report_t + future)` around one report.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: u64,
    pub session: SessionKey,
    pub report_t: f64,
    pub frames: Vec<Frame>,
    pub label: CsClass,
}

/// One learner input row: per-feature means over a window of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub segment_id: u64,
    pub session: SessionKey,
    pub window_index: usize,
    pub features: Vec<f64>,
    pub label: CsClass,
}

impl WindowSample {
    pub fn user(&self) -> &str {
        &self.session.user_id
    }

    pub fn scenario(&self) -> &str {
        &self.session.scenario_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PreprocessWarning {
    SegmentSkipped {
        session: SessionKey,
        report_t: f64,
        reason: String,
    },
    ShortSegment {
        segment_id: u64,
        frames: usize,
    },
}

impl fmt::Display for PreprocessWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreprocessWarning::SegmentSkipped {
                session,
                report_t,
                reason,
            } => write!(f, "{session}: report at {report_t:.2} s skipped ({reason})"),
            PreprocessWarning::ShortSegment { segment_id, frames } => {
                write!(f, "segment {segment_id} has only {frames} frames; no windows")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentExtraction {
    pub segments: Vec<Segment>,
    pub warnings: Vec<PreprocessWarning>,
}

/// Cut one segment per report whose span is fully covered by the stream.
/// Segment ids are assigned consecutively from `first_id`.
pub fn extract_segments(
    session: &SessionKey,
    frames: &[Frame],
    reports: &[FmsReport],
    th: &BinningThresholds,
    span: &SegmentSpan,
    first_id: u64,
) -> Result<SegmentExtraction, PreprocessError> {
    let mut out = SegmentExtraction::default();
    let (first, last) = match (frames.first(), frames.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => {
            for r in reports {
                out.warnings.push(PreprocessWarning::SegmentSkipped {
                    session: session.clone(),
                    report_t: r.t,
                    reason: "no frames".into(),
                });
            }
            return Ok(out);
        }
    };
    let mut next_id = first_id;
    for r in reports {
        let label = bin_fms(r.score, th)?;
        let reason = if !span.has_history(first, r.t) {
            Some("insufficient history")
        } else if !span.has_future(last, r.t) {
            Some("insufficient future")
        } else {
            None
        };
        if let Some(reason) = reason {
            log::warn!("{session}: skipping report at {:.2} s ({reason})", r.t);
            out.warnings.push(PreprocessWarning::SegmentSkipped {
                session: session.clone(),
                report_t: r.t,
                reason: reason.into(),
            });
            continue;
        }
        let (start, end) = (span.start(r.t), span.end(r.t));
        let lo = frames.partition_point(|f| f.t < start);
        let hi = frames.partition_point(|f| f.t < end);
        out.segments.push(Segment {
            id: next_id,
            session: session.clone(),
            report_t: r.t,
            frames: frames[lo..hi].to_vec(),
            label,
        });
        next_id += 1;
    }
    Ok(out)
}

/// Split a segment into consecutive non-overlapping windows of `window_len`
/// frames from its start and average the active features of each; trailing
/// frames that do not fill a window are dropped.
pub fn windowize(seg: &Segment, active: &[usize], window_len: usize) -> (Vec<WindowSample>, Option<PreprocessWarning>) {
    let window_len = window_len.max(1);
    let n = seg.frames.len() / window_len;
    let warning = (n == 0).then_some(PreprocessWarning::ShortSegment {
        segment_id: seg.id,
        frames: seg.frames.len(),
    });
    let windows = seg
        .frames
        .chunks_exact(window_len)
        .enumerate()
        .map(|(w, chunk)| {
            let features = active
                .iter()
                .map(|&f| chunk.iter().map(|fr| fr.features[f]).sum::<f64>() / window_len as f64)
                .collect();
            WindowSample {
                segment_id: seg.id,
                session: seg.session.clone(),
                window_index: w,
                features,
                label: seg.label,
            }
        })
        .collect();
    (windows, warning)
}

/// The `preprocess` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub thresholds: BinningThresholds,
    pub cleaning: CleaningPolicy,
    pub segment: SegmentSpan,
    pub window_len: usize,
    pub frame_rate: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            thresholds: BinningThresholds::default(),
            cleaning: CleaningPolicy::default(),
            segment: SegmentSpan::default(),
            window_len: WINDOW_FRAMES,
            frame_rate: 20.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Preprocessed {
    /// All 40 features per window, ordered by session then segment then window.
    pub samples: Vec<WindowSample>,
    pub segment_count: usize,
    pub warnings: Vec<PreprocessWarning>,
}

/// Clean every session stream, cut segments and average windows.
///
/// Sessions are processed in parallel; segment ids are assigned afterwards in
/// session order so output does not depend on scheduling.
pub fn preprocess_dataset(d: &Dataset, cfg: &PreprocessConfig) -> Result<Preprocessed, PreprocessError> {
    cfg.thresholds.validate()?;
    cfg.cleaning.validate()?;
    let mut span = cfg.segment;
    span.frame_rate = cfg.frame_rate;
    let all: Vec<usize> = (0..FEATURE_DIM).collect();

    let sessions: Vec<&SessionKey> = d.sessions().collect();
    let per_session: Vec<Result<SegmentExtraction, PreprocessError>> = sessions
        .par_iter()
        .map(|key| {
            let cleaned = clean_frames(d.frames(key), &cfg.cleaning).map_err(|e| match e {
                PreprocessError::AllNonFinite { feature, .. } => PreprocessError::AllNonFinite {
                    session: key.to_string(),
                    feature,
                },
                other => other,
            })?;
            extract_segments(key, &cleaned, d.reports(key), &cfg.thresholds, &span, 0)
        })
        .collect();

    let mut out = Preprocessed::default();
    let mut next_id = 0u64;
    for extraction in per_session {
        let extraction = extraction?;
        out.warnings.extend(extraction.warnings);
        for mut seg in extraction.segments {
            seg.id = next_id;
            next_id += 1;
            let (windows, warning) = windowize(&seg, &all, cfg.window_len);
            out.samples.extend(windows);
            out.warnings.extend(warning);
        }
    }
    out.segment_count = next_id as usize;
    Ok(out)
}
