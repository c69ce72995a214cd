//! Metrics, the Friedman rank test, timing, experiment runners and report
//! emission.

mod experiments;
mod friedman;
mod metrics;
mod report;
mod stats;
mod timing;

use thiserror::Error;

pub(crate) use experiments::Evaluator;
pub use experiments::{
    run_experiment, ConstructionMean, ExperimentKind, ExperimentResult, FoldRecord, RankTests, ResultRow, Summary,
};
pub use friedman::{friedman_test, rank_row, FriedmanResult};
pub use metrics::{classification_metrics, confusion_matrix, ConfusionMatrix, MetricsReport};
pub use report::{emit_report, from_json, report_stem, to_csv, to_json, to_markdown, ReportFormat};
pub use stats::{chi2_survival, ln_gamma, regularized_gamma_q};
pub use timing::{measure_timing, Stopwatch, SystemStopwatch, Timing};

use crate::features::FeatureError;
use crate::learners::LearnerError;
use crate::partition::PartitionError;
use crate::preprocess::PreprocessError;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("need at least 2 blocks and 2 treatments, got N = {n}, k = {k}")]
    DegenerateInput { n: usize, k: usize },
    #[error("user `{user}` has samples in {classes} class(es); at least 2 are required")]
    UserIneligible { user: String, classes: usize },
    #[error("no fold could be evaluated for {0}")]
    NoEvaluatedFolds(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("unknown report format `{0}`")]
    UnknownFormat(String),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
