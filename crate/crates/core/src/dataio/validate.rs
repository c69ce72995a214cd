use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Dataset, SessionKey};

/// Temporal extent of the tracking context attached to one FMS report:
/// `[t - history_s, t + future_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentSpan {
    pub history_s: f64,
    pub future_s: f64,
    /// Nominal sampling rate, used only for boundary tolerances.
    pub frame_rate: f64,
}

impl Default for SegmentSpan {
    fn default() -> Self {
        SegmentSpan {
            history_s: 10.0,
            future_s: 1.0,
            frame_rate: 20.0,
        }
    }
}

impl SegmentSpan {
    fn spacing(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn start(&self, report_t: f64) -> f64 {
        report_t - self.history_s
    }

    pub fn end(&self, report_t: f64) -> f64 {
        report_t + self.future_s
    }

    /// The stream starts early enough to hold the full history.
    pub fn has_history(&self, first_t: f64, report_t: f64) -> bool {
        first_t <= self.start(report_t) + 0.5 * self.spacing()
    }

    /// The stream reaches the last nominal frame before `t + future_s`.
    pub fn has_future(&self, last_t: f64, report_t: f64) -> bool {
        last_t >= self.end(report_t) - 1.5 * self.spacing()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageIssue {
    InsufficientHistory,
    InsufficientFuture,
}

impl fmt::Display for CoverageIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoverageIssue::InsufficientHistory => "insufficient history",
            CoverageIssue::InsufficientFuture => "insufficient future",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportWarning {
    pub report_t: f64,
    pub issue: CoverageIssue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: SessionKey,
    pub frame_count: usize,
    pub duration_s: f64,
    pub mean_spacing_s: f64,
    pub report_count: usize,
    pub warnings: Vec<ReportWarning>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sessions: Vec<SessionSummary>,
}

impl ValidationReport {
    pub fn warning_count(&self) -> usize {
        self.sessions.iter().map(|s| s.warnings.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.sessions {
            writeln!(
                f,
                "{}: {} frames, {:.2} s, spacing {:.4} s, {} reports",
                s.session, s.frame_count, s.duration_s, s.mean_spacing_s, s.report_count
            )?;
            for w in &s.warnings {
                writeln!(f, "  report at {:.2} s: {}", w.report_t, w.issue)?;
            }
        }
        write!(f, "{} warning(s)", self.warning_count())
    }
}

pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    validate_dataset_with(d, &SegmentSpan::default())
}

/// Summarise each session and flag reports whose segment would not be fully
/// covered by frames.
pub fn validate_dataset_with(d: &Dataset, span: &SegmentSpan) -> ValidationReport {
    let sessions = d
        .frame_map()
        .iter()
        .map(|(key, frames)| {
            let reports = d.reports(key);
            let (first, last) = match (frames.first(), frames.last()) {
                (Some(a), Some(b)) => (a.t, b.t),
                _ => (f64::NAN, f64::NAN),
            };
            let duration = if frames.is_empty() { 0.0 } else { last - first };
            let mean_spacing = if frames.len() > 1 {
                duration / (frames.len() - 1) as f64
            } else {
                0.0
            };
            let mut warnings = Vec::new();
            for r in reports {
                if frames.is_empty() || !span.has_history(first, r.t) {
                    warnings.push(ReportWarning {
                        report_t: r.t,
                        issue: CoverageIssue::InsufficientHistory,
                    });
                }
                if frames.is_empty() || !span.has_future(last, r.t) {
                    warnings.push(ReportWarning {
                        report_t: r.t,
                        issue: CoverageIssue::InsufficientFuture,
                    });
                }
            }
            SessionSummary {
                session: key.clone(),
                frame_count: frames.len(),
                duration_s: duration,
                mean_spacing_s: mean_spacing,
                report_count: reports.len(),
                warnings,
            }
        })
        .collect();
    ValidationReport { sessions }
}
