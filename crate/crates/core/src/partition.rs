//! Stratified k-fold splitting and user-specific training-set construction.
//!
//! Relative to a fixed test fold, every other sample gets a specificity level:
//!
//! * `L0`: its user has no sample in the test fold;
//! * `L1`: a test-fold user, but a scenario absent from that user's test samples;
//! * `L2`: a test-fold user and scenario, but a segment absent from the test fold;
//! * `L3`: same user, scenario and segment as some test sample (a sibling window).
//!
//! Cross-user training sets are unions of L1..L3; the personalized protocol
//! adds L0.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{CsClass, WindowSample};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("fold count must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("no samples to split")]
    EmptyLabels,
    #[error("training set for {0} is empty")]
    EmptyTrainingSet(TrainingCombo),
    #[error("user `{user}` has samples in {classes} class(es); at least 2 are required")]
    InsufficientClasses { user: String, classes: usize },
    #[error("user `{0}` has no samples")]
    UnknownUser(String),
    #[error("invalid training combo `{0}`")]
    InvalidCombo(String),
}

/// The identity fields level assignment looks at.
pub trait SampleKey {
    fn user(&self) -> &str;
    fn scenario(&self) -> &str;
    fn segment(&self) -> u64;
}

impl SampleKey for WindowSample {
    fn user(&self) -> &str {
        &self.session.user_id
    }
    fn scenario(&self) -> &str {
        &self.session.scenario_id
    }
    fn segment(&self) -> u64 {
        self.segment_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldWarning {
    pub class: CsClass,
    pub count: usize,
    pub k: usize,
}

impl fmt::Display for FoldWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "class {} has {} sample(s), fewer than k = {}",
            self.class, self.count, self.k
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Sorted sample indices per fold.
    pub folds: Vec<Vec<usize>>,
    pub warnings: Vec<FoldWarning>,
}

impl FoldPlan {
    /// Indices outside fold `i`, sorted.
    pub fn complement(&self, i: usize) -> Vec<usize> {
        let mut rest: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        rest.sort_unstable();
        rest
    }
}

/// Shuffle each class with the seed and deal its samples round-robin over the
/// folds. The dealing position carries over from one class to the next, so
/// overall fold sizes also differ by at most one.
pub fn stratified_kfold(labels: &[CsClass], k: usize, seed: u64) -> Result<FoldPlan, PartitionError> {
    if k < 2 {
        return Err(PartitionError::InvalidK(k));
    }
    if labels.is_empty() {
        return Err(PartitionError::EmptyLabels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut warnings = Vec::new();
    let mut pos = 0usize;
    for class in CsClass::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            log::warn!("class {class} has {} samples, fewer than k = {k}", members.len());
            warnings.push(FoldWarning {
                class,
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        for idx in members {
            folds[pos % k].push(idx);
            pos += 1;
        }
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(FoldPlan {
        k,
        seed,
        folds,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpecificityLevel {
    L0,
    L1,
    L2,
    L3,
}

impl SpecificityLevel {
    pub const ALL: [SpecificityLevel; 4] = [
        SpecificityLevel::L0,
        SpecificityLevel::L1,
        SpecificityLevel::L2,
        SpecificityLevel::L3,
    ];
}

impl fmt::Display for SpecificityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", *self as usize)
    }
}

impl FromStr for SpecificityLevel {
    type Err = PartitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L0" => Ok(SpecificityLevel::L0),
            "L1" => Ok(SpecificityLevel::L1),
            "L2" => Ok(SpecificityLevel::L2),
            "L3" => Ok(SpecificityLevel::L3),
            _ => Err(PartitionError::InvalidCombo(s.to_string())),
        }
    }
}

/// Level of every sample relative to one test fold; `None` marks test samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecificityAssignment {
    pub levels: Vec<Option<SpecificityLevel>>,
}

impl SpecificityAssignment {
    pub fn indices(&self, level: SpecificityLevel) -> Vec<usize> {
        self.levels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(level))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, level: SpecificityLevel) -> usize {
        self.levels.iter().filter(|l| **l == Some(level)).count()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.levels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn assign_levels<S: SampleKey>(samples: &[S], test_fold: &[usize]) -> SpecificityAssignment {
    #[derive(Default)]
    struct TestFootprint<'a> {
        scenarios: HashSet<&'a str>,
        segments: HashSet<(&'a str, u64)>,
    }
    let mut footprint: HashMap<&str, TestFootprint> = HashMap::new();
    let mut is_test = vec![false; samples.len()];
    for &i in test_fold {
        is_test[i] = true;
        let s = &samples[i];
        let fp = footprint.entry(s.user()).or_default();
        fp.scenarios.insert(s.scenario());
        fp.segments.insert((s.scenario(), s.segment()));
    }
    let levels = samples
        .iter()
        .zip(&is_test)
        .map(|(s, &test)| {
            if test {
                return None;
            }
            Some(match footprint.get(s.user()) {
                None => SpecificityLevel::L0,
                Some(fp) if fp.segments.contains(&(s.scenario(), s.segment())) => SpecificityLevel::L3,
                Some(fp) if fp.scenarios.contains(s.scenario()) => SpecificityLevel::L2,
                Some(_) => SpecificityLevel::L1,
            })
        })
        .collect();
    SpecificityAssignment { levels }
}

/// A non-empty union of specificity levels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrainingCombo(BTreeSet<SpecificityLevel>);

impl TrainingCombo {
    pub fn new(levels: impl IntoIterator<Item = SpecificityLevel>) -> Result<Self, PartitionError> {
        let set: BTreeSet<_> = levels.into_iter().collect();
        if set.is_empty() {
            return Err(PartitionError::InvalidCombo(String::new()));
        }
        Ok(TrainingCombo(set))
    }

    pub fn levels(&self) -> impl Iterator<Item = SpecificityLevel> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, level: SpecificityLevel) -> bool {
        self.0.contains(&level)
    }

    /// The seven cross-user combinations, singles first.
    pub fn cross_user_combos() -> Vec<TrainingCombo> {
        use SpecificityLevel::*;
        [&[L1][..], &[L2], &[L3], &[L1, L2], &[L1, L3], &[L2, L3], &[L1, L2, L3]]
            .iter()
            .map(|ls| TrainingCombo::new(ls.iter().copied()).unwrap())
            .collect()
    }

    pub fn all_user_specific() -> TrainingCombo {
        use SpecificityLevel::*;
        TrainingCombo::new([L1, L2, L3]).unwrap()
    }

    pub fn personalized() -> TrainingCombo {
        use SpecificityLevel::*;
        TrainingCombo::new([L0, L1, L3]).unwrap()
    }

    pub fn baseline() -> TrainingCombo {
        TrainingCombo::new([SpecificityLevel::L0]).unwrap()
    }

    /// Report label, e.g. "Level 1 + Level 3".
    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|l| format!("Level {}", *l as usize))
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

impl fmt::Display for TrainingCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for TrainingCombo {
    type Err = PartitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let levels = s
            .split(['+', ','])
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| PartitionError::InvalidCombo(s.to_string()))?;
        TrainingCombo::new(levels).map_err(|_| PartitionError::InvalidCombo(s.to_string()))
    }
}

impl Serialize for TrainingCombo {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter().map(|l| l.to_string()))
    }
}

impl<'de> Deserialize<'de> for TrainingCombo {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            List(Vec<String>),
        }
        let text = match Repr::deserialize(deserializer)? {
            Repr::Text(s) => s,
            Repr::List(v) => v.join("+"),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Sorted union of the requested levels.
pub fn compose_training_set(
    assignment: &SpecificityAssignment,
    combo: &TrainingCombo,
) -> Result<Vec<usize>, PartitionError> {
    let set: Vec<usize> = assignment
        .levels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_some_and(|l| combo.contains(l)))
        .map(|(i, _)| i)
        .collect();
    if set.is_empty() {
        return Err(PartitionError::EmptyTrainingSet(combo.clone()));
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonalizedFold {
    pub fold: usize,
    /// L0 + L1 + L3 relative to `test`.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub assignment: SpecificityAssignment,
}

/// Distinct classes among the target user's samples.
pub fn user_class_count<S: SampleKey>(samples: &[S], labels: &[CsClass], user: &str) -> usize {
    let classes: BTreeSet<CsClass> = samples
        .iter()
        .zip(labels)
        .filter(|(s, _)| s.user() == user)
        .map(|(_, &l)| l)
        .collect();
    classes.len()
}

/// Stratified k-fold over one user's samples; each fold trains on every other
/// user (L0) plus the user's own L1 and L3 samples. Empty folds are skipped.
pub fn personalized_plan<S: SampleKey>(
    samples: &[S],
    labels: &[CsClass],
    target_user: &str,
    k: usize,
    seed: u64,
) -> Result<Vec<PersonalizedFold>, PartitionError> {
    let own: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].user() == target_user)
        .collect();
    if own.is_empty() {
        return Err(PartitionError::UnknownUser(target_user.to_string()));
    }
    let classes = user_class_count(samples, labels, target_user);
    if classes < 2 {
        return Err(PartitionError::InsufficientClasses {
            user: target_user.to_string(),
            classes,
        });
    }
    let own_labels: Vec<CsClass> = own.iter().map(|&i| labels[i]).collect();
    let plan = stratified_kfold(&own_labels, k, seed)?;
    let combo = TrainingCombo::personalized();
    plan.folds
        .iter()
        .enumerate()
        .filter(|(_, f)| !f.is_empty())
        .map(|(fold, local)| {
            let test: Vec<usize> = local.iter().map(|&j| own[j]).collect();
            let assignment = assign_levels(samples, &test);
            let train = compose_training_set(&assignment, &combo)?;
            Ok(PersonalizedFold {
                fold,
                train,
                test,
                assignment,
            })
        })
        .collect()
}
