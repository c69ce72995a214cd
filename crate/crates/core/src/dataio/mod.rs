//! Raw tracking streams and FMS reports: types, CSV I/O, validation and
//! synthetic generation.

mod csv_io;
mod synth;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FEATURE_DIM;

pub use csv_io::{
    parse_reports_csv, parse_reports_csv_mapped, parse_tracking_csv, read_dataset, write_dataset, write_reports_csv,
    write_tracking_csv, ColumnMapping, REPORTS_FILE, REPORT_COLUMNS, TRACKING_FILE, TRACKING_ID_COLUMNS,
};
pub use synth::{generate_synthetic, SynthSpec};
pub use validate::{
    validate_dataset, validate_dataset_with, CoverageIssue, ReportWarning, SegmentSpan, SessionSummary,
    ValidationReport,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("malformed row at line {line}: column `{column}` has value `{value}`")]
    MalformedRow { line: u64, column: String, value: String },
    #[error("timestamp does not increase at line {line} in session {session}")]
    NonMonotonicTime { line: u64, session: SessionKey },
    #[error("FMS score {score} out of range [0, 10] at line {line}")]
    ScoreOutOfRange { line: u64, score: i64 },
    #[error("reports for session {0} have no frame stream")]
    OrphanReports(SessionKey),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid column mapping at line {line}: {reason}")]
    InvalidMapping { line: usize, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A (user, scenario) pair identifying one recording session.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionKey {
    pub user_id: String,
    pub scenario_id: String,
}

impl SessionKey {
    pub fn new(user_id: impl Into<String>, scenario_id: impl Into<String>) -> Self {
        SessionKey {
            user_id: user_id.into(),
            scenario_id: scenario_id.into(),
        }
    }
}

impl fmt::Display for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.user_id, self.scenario_id)
    }
}

/// One sample of the 40 tracking features, tagged with its session.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingFrame {
    pub session: SessionKey,
    pub t: f64,
    pub features: [f64; FEATURE_DIM],
}

/// A frame inside a session stream; the session is implied by the container.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub features: [f64; FEATURE_DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmsReport {
    pub session: SessionKey,
    pub t: f64,
    pub score: u8,
}

/// Frame streams and report lists per session.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    frames: BTreeMap<SessionKey, Vec<Frame>>,
    reports: BTreeMap<SessionKey, Vec<FmsReport>>,
    provenance: String,
}

impl Dataset {
    /// Group parsed frames and reports by session. Inputs are expected to be
    /// time-ordered within each session, as produced by the parsers.
    pub fn from_parts(
        frames: Vec<TrackingFrame>,
        reports: Vec<FmsReport>,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        let mut by_session: BTreeMap<SessionKey, Vec<Frame>> = BTreeMap::new();
        for f in frames {
            by_session.entry(f.session).or_default().push(Frame {
                t: f.t,
                features: f.features,
            });
        }
        let mut rep: BTreeMap<SessionKey, Vec<FmsReport>> = BTreeMap::new();
        for r in reports {
            rep.entry(r.session.clone()).or_default().push(r);
        }
        Self::from_sessions(by_session, rep, provenance)
    }

    pub fn from_sessions(
        frames: BTreeMap<SessionKey, Vec<Frame>>,
        mut reports: BTreeMap<SessionKey, Vec<FmsReport>>,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        if let Some(orphan) = reports.keys().find(|k| !frames.contains_key(*k)) {
            return Err(DataError::OrphanReports(orphan.clone()));
        }
        for list in reports.values_mut() {
            list.sort_by(|a, b| a.t.total_cmp(&b.t));
        }
        Ok(Dataset {
            frames,
            reports,
            provenance: provenance.into(),
        })
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionKey> {
        self.frames.keys()
    }

    pub fn frames(&self, session: &SessionKey) -> &[Frame] {
        self.frames.get(session).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn reports(&self, session: &SessionKey) -> &[FmsReport] {
        self.reports.get(session).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn frame_map(&self) -> &BTreeMap<SessionKey, Vec<Frame>> {
        &self.frames
    }

    pub fn report_count(&self) -> usize {
        self.reports.values().map(Vec::len).sum()
    }

    pub fn frame_count(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Flatten back into frame rows, ordered by session then time.
    pub fn tracking_frames(&self) -> Vec<TrackingFrame> {
        self.frames
            .iter()
            .flat_map(|(k, fs)| {
                fs.iter().map(move |f| TrackingFrame {
                    session: k.clone(),
                    t: f.t,
                    features: f.features,
                })
            })
            .collect()
    }

    pub fn all_reports(&self) -> Vec<FmsReport> {
        self.reports.values().flatten().cloned().collect()
    }
}
