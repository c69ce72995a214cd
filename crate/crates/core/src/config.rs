//! The pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluation::{ExperimentKind, ReportFormat};
use crate::features::{registry, FeatureSubset, SubsetSpec};
use crate::learners::ModelConfig;
use crate::partition::TrainingCombo;
use crate::preprocess::PreprocessConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    /// Overrides the experiment's built-in subset when set.
    pub subset: Option<SubsetSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { k: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Overrides the cross-user training combo where one applies.
    pub combo: Option<TrainingCombo>,
    /// Restricts personalization and calibration to one user.
    pub target_user: Option<String>,
    pub timing_repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::CompareModels,
            combo: None,
            target_user: None,
            timing_repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub tracking: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    /// Header rename file for external datasets.
    pub column_mapping: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            tracking: None,
            reports: None,
            column_mapping: None,
            out_dir: PathBuf::from("results"),
            formats: ReportFormat::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub features: FeaturesConfig,
    pub cv: CvConfig,
    pub model: ModelConfig,
    pub experiment: ExperimentConfig,
    pub io: IoConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.cv.k < 2 {
            return invalid(format!("cv.k must be >= 2, got {}", self.cv.k));
        }
        if self.experiment.timing_repeats == 0 {
            return invalid("experiment.timing_repeats must be >= 1".into());
        }
        if let Err(e) = self.preprocess.thresholds.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.preprocess.cleaning.validate() {
            return invalid(e.to_string());
        }
        if self.preprocess.window_len == 0 {
            return invalid("preprocess.window_len must be >= 1".into());
        }
        if let Err(e) = self.model.gbt.validate() {
            return invalid(e.to_string());
        }
        if self.model.stack.oof_folds < 2 {
            return invalid("model.stack.oof_folds must be >= 2".into());
        }
        if let Some(spec) = &self.features.subset {
            if let Err(e) = spec.resolve(registry()) {
                return invalid(e.to_string());
            }
        }
        Ok(())
    }

    /// The configured subset, or `default` when none is set.
    pub fn subset_or(&self, default: &str) -> Result<FeatureSubset, ConfigError> {
        let spec = self
            .features
            .subset
            .clone()
            .unwrap_or_else(|| SubsetSpec::Named(default.into()));
        spec.resolve(registry())
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    /// Output location and formats are excluded so they do not change a
    /// result's identity.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.io.out_dir = IoConfig::default().out_dir;
        c.io.formats = IoConfig::default().formats;
        let text = toml::to_string(&c).unwrap_or_default();
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}
