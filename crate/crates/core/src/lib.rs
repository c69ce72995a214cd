//! Cybersickness severity detection from eye and head tracking streams.
//!
//! The pipeline runs raw session streams through [`preprocess`] into
//! per-window feature means, splits them with [`partition`], trains the
//! ensembles in [`learners`] and scores them with [`evaluation`].
//! [`calibrate`] replays the pretrain-then-calibrate workflow for one user.

pub mod calibrate;
pub mod config;
pub mod dataio;
pub mod evaluation;
pub mod features;
pub mod learners;
pub mod partition;
pub mod preprocess;
mod rng;

pub use config::PipelineConfig;
pub use dataio::{DataError, Dataset};
pub use evaluation::{run_experiment, ExperimentKind, ExperimentResult};
pub use features::FEATURE_DIM;
pub use learners::{Model, ModelKind};
pub use preprocess::{CsClass, WindowSample};
