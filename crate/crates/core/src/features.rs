//! The 40-dimensional eye/head feature registry.
//!
//! Columns are laid out in twelve raw blocks (the recording layout) and
//! grouped into ten semantic groups, the unit of feature ablation. The two
//! combined-gaze blocks recorded in both HMD and world coordinates each
//! collapse into a single six-dimensional group.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Total number of tracking features per frame.
pub const FEATURE_DIM: usize = 40;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("unknown feature subset `{0}`")]
    UnknownSubset(String),
    #[error("unknown feature group `{0}`")]
    UnknownGroup(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Semantic feature groups, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    ConvDist,
    EyeOpenness,
    PupilDiameter,
    PupilPosition,
    GazeDirHMD,
    CombinedGazeOrigin,
    CombinedGazeDirection,
    EyeOrigin,
    HeadQuaternion,
    HeadEuler,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 10] = [
        FeatureGroup::ConvDist,
        FeatureGroup::EyeOpenness,
        FeatureGroup::PupilDiameter,
        FeatureGroup::PupilPosition,
        FeatureGroup::GazeDirHMD,
        FeatureGroup::CombinedGazeOrigin,
        FeatureGroup::CombinedGazeDirection,
        FeatureGroup::EyeOrigin,
        FeatureGroup::HeadQuaternion,
        FeatureGroup::HeadEuler,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::ConvDist => "ConvDist",
            FeatureGroup::EyeOpenness => "EyeOpenness",
            FeatureGroup::PupilDiameter => "PupilDiameter",
            FeatureGroup::PupilPosition => "PupilPosition",
            FeatureGroup::GazeDirHMD => "GazeDirHMD",
            FeatureGroup::CombinedGazeOrigin => "CombinedGazeOrigin",
            FeatureGroup::CombinedGazeDirection => "CombinedGazeDirection",
            FeatureGroup::EyeOrigin => "EyeOrigin",
            FeatureGroup::HeadQuaternion => "HeadQuaternion",
            FeatureGroup::HeadEuler => "HeadEuler",
        }
    }

    /// Short label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            FeatureGroup::ConvDist => "Conv. Dist.",
            FeatureGroup::EyeOpenness => "Eye Open.",
            FeatureGroup::PupilDiameter => "Pupil Diam.",
            FeatureGroup::PupilPosition => "Pupil Pos.",
            FeatureGroup::GazeDirHMD => "Gaze Dir. (HMD)",
            FeatureGroup::CombinedGazeOrigin => "Comb. Gaze Ori.",
            FeatureGroup::CombinedGazeDirection => "Comb. Gaze Dir.",
            FeatureGroup::EyeOrigin => "Eye Ori.",
            FeatureGroup::HeadQuaternion => "Head QRot.",
            FeatureGroup::HeadEuler => "Head Eul.",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureGroup {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureGroup::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| FeatureError::UnknownGroup(s.to_string()))
    }
}

/// One raw recording block, e.g. "Eye Origin, both eyes, HMD frame".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawBlock {
    pub name: &'static str,
    pub group: FeatureGroup,
    pub columns: Vec<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureDescriptor {
    pub name: &'static str,
    pub block: &'static str,
    pub group: FeatureGroup,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct FeatureRegistry {
    features: Vec<FeatureDescriptor>,
    blocks: Vec<RawBlock>,
}

#[rustfmt::skip]
fn raw_blocks() -> Vec<RawBlock> {
    use FeatureGroup::*;
    let block = |name, group, columns: &[&'static str]| RawBlock { name, group, columns: columns.to_vec() };
    vec![
        block("Convergence Distance", ConvDist, &["conv_dist"]),
        block("Pupil Diameter", PupilDiameter, &["pupil_diam_l", "pupil_diam_r"]),
        block("Eye Gaze Direction (HMD)", GazeDirHMD, &[
            "gaze_dir_l_x", "gaze_dir_l_y", "gaze_dir_l_z",
            "gaze_dir_r_x", "gaze_dir_r_y", "gaze_dir_r_z",
        ]),
        block("Eye Openness", EyeOpenness, &["eye_open_l", "eye_open_r"]),
        block("Pupil Position", PupilPosition, &[
            "pupil_pos_l_x", "pupil_pos_l_y", "pupil_pos_r_x", "pupil_pos_r_y",
        ]),
        block("Eye Origin (HMD)", EyeOrigin, &[
            "eye_origin_l_x", "eye_origin_l_y", "eye_origin_l_z",
            "eye_origin_r_x", "eye_origin_r_y", "eye_origin_r_z",
        ]),
        block("Combined Gaze Origin (HMD)", CombinedGazeOrigin, &[
            "cgaze_origin_hmd_x", "cgaze_origin_hmd_y", "cgaze_origin_hmd_z",
        ]),
        block("Combined Gaze Direction (HMD)", CombinedGazeDirection, &[
            "cgaze_dir_hmd_x", "cgaze_dir_hmd_y", "cgaze_dir_hmd_z",
        ]),
        block("Combined Gaze Origin (World)", CombinedGazeOrigin, &[
            "cgaze_origin_world_x", "cgaze_origin_world_y", "cgaze_origin_world_z",
        ]),
        block("Combined Gaze Direction (World)", CombinedGazeDirection, &[
            "cgaze_dir_world_x", "cgaze_dir_world_y", "cgaze_dir_world_z",
        ]),
        block("Head Quaternion Rotation", HeadQuaternion, &[
            "head_quat_w", "head_quat_x", "head_quat_y", "head_quat_z",
        ]),
        block("Head Euler Angles", HeadEuler, &["head_euler_x", "head_euler_y", "head_euler_z"]),
    ]
}

impl FeatureRegistry {
    fn build() -> Self {
        let blocks = raw_blocks();
        let mut features = Vec::with_capacity(FEATURE_DIM);
        for block in &blocks {
            for &name in &block.columns {
                let index = features.len();
                features.push(FeatureDescriptor {
                    name,
                    block: block.name,
                    group: block.group,
                    index,
                });
            }
        }
        debug_assert_eq!(features.len(), FEATURE_DIM);
        FeatureRegistry { features, blocks }
    }

    pub fn features(&self) -> &[FeatureDescriptor] {
        &self.features
    }

    pub fn blocks(&self) -> &[RawBlock] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Canonical column names in registry order.
    pub fn column_names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.features.iter().map(|f| f.name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn group_indices(&self, group: FeatureGroup) -> Vec<usize> {
        self.features
            .iter()
            .filter(|f| f.group == group)
            .map(|f| f.index)
            .collect()
    }

    pub fn group_subset(&self, group: FeatureGroup) -> FeatureSubset {
        FeatureSubset {
            name: format!("group:{}", group.name()),
            indices: self.group_indices(group),
        }
    }

    /// Union of groups, in registry order.
    pub fn union_of(&self, name: impl Into<String>, groups: &[FeatureGroup]) -> FeatureSubset {
        let indices = self
            .features
            .iter()
            .filter(|f| groups.contains(&f.group))
            .map(|f| f.index)
            .collect();
        FeatureSubset {
            name: name.into(),
            indices,
        }
    }

    /// Resolve one of `head7`, `eye16`, `optimal23`, `all40` or `group:<GroupName>`.
    pub fn resolve_subset(&self, name: &str) -> Result<FeatureSubset, FeatureError> {
        use FeatureGroup::*;
        const HEAD: [FeatureGroup; 2] = [HeadQuaternion, HeadEuler];
        const EYE: [FeatureGroup; 3] = [PupilPosition, EyeOrigin, CombinedGazeOrigin];
        match name {
            "head7" => Ok(self.union_of(name, &HEAD)),
            "eye16" => Ok(self.union_of(name, &EYE)),
            "optimal23" => {
                let groups: Vec<_> = EYE.iter().chain(HEAD.iter()).copied().collect();
                Ok(self.union_of(name, &groups))
            }
            "all40" => Ok(FeatureSubset {
                name: name.to_string(),
                indices: (0..self.dim()).collect(),
            }),
            other => match other.strip_prefix("group:") {
                Some(g) => Ok(self.group_subset(g.parse()?)),
                None => Err(FeatureError::UnknownSubset(other.to_string())),
            },
        }
    }
}

/// The process-wide registry.
pub fn registry() -> &'static FeatureRegistry {
    static REGISTRY: OnceLock<FeatureRegistry> = OnceLock::new();
    REGISTRY.get_or_init(FeatureRegistry::build)
}

/// A named, sorted set of registry indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSubset {
    pub name: String,
    pub indices: Vec<usize>,
}

impl FeatureSubset {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn project(&self, features: &[f64]) -> Result<Vec<f64>, FeatureError> {
        project(features, self)
    }
}

/// Copy the subset's columns out of a full 40-vector, in registry order.
pub fn project(features: &[f64], subset: &FeatureSubset) -> Result<Vec<f64>, FeatureError> {
    if features.len() != FEATURE_DIM {
        return Err(FeatureError::DimensionMismatch {
            expected: FEATURE_DIM,
            actual: features.len(),
        });
    }
    Ok(subset.indices.iter().map(|&i| features[i]).collect())
}

/// How a config names a feature subset: either a named subset or a list of groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubsetSpec {
    Named(String),
    Groups(Vec<FeatureGroup>),
}

impl SubsetSpec {
    pub fn resolve(&self, registry: &FeatureRegistry) -> Result<FeatureSubset, FeatureError> {
        match self {
            SubsetSpec::Named(name) => registry.resolve_subset(name),
            SubsetSpec::Groups(groups) => {
                let name = groups.iter().map(|g| g.name()).collect::<Vec<_>>().join("+");
                Ok(registry.union_of(name, groups))
            }
        }
    }
}

impl Default for SubsetSpec {
    fn default() -> Self {
        SubsetSpec::Named("all40".into())
    }
}
