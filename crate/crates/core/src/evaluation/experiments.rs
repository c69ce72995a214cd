use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::friedman::{friedman_test, FriedmanResult};
use super::metrics::{classification_metrics, confusion_matrix, ConfusionMatrix, MetricsReport};
use super::timing::{measure_timing, SystemStopwatch};
use super::EvaluationError;
use crate::config::PipelineConfig;
use crate::features::{registry, FeatureGroup, FeatureSubset};
use crate::learners::{Matrix, ModelKind, N_CLASSES};
use crate::partition::{
    assign_levels, compose_training_set, personalized_plan, stratified_kfold, user_class_count, PartitionError,
    SpecificityAssignment, TrainingCombo,
};
use crate::preprocess::{fit_standardizer, CsClass, WindowSample};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CompareModels,
    AblateFeatures,
    AblateLevels,
    Personalize,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::CompareModels,
        ExperimentKind::AblateFeatures,
        ExperimentKind::AblateLevels,
        ExperimentKind::Personalize,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            ExperimentKind::CompareModels => "compare-models",
            ExperimentKind::AblateFeatures => "ablate-features",
            ExperimentKind::AblateLevels => "ablate-levels",
            ExperimentKind::Personalize => "personalize",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ExperimentKind {
    type Err = EvaluationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.key() == s.trim())
            .ok_or_else(|| EvaluationError::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
}

/// Fold averages; standard deviations are population (ddof = 0).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub folds: usize,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_sd: f64,
    pub precision: [f64; N_CLASSES],
    pub recall: [f64; N_CLASSES],
    pub f1: [f64; N_CLASSES],
    pub train_size_mean: f64,
    pub train_time_s: f64,
    pub inference_time_ms_per_sample: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl Summary {
    pub fn from_folds(folds: &[FoldRecord]) -> Summary {
        let col = |f: &dyn Fn(&FoldRecord) -> f64| folds.iter().map(f).collect::<Vec<_>>();
        let (accuracy_mean, accuracy_sd) = mean_sd(&col(&|r| r.metrics.accuracy));
        let (macro_f1_mean, macro_f1_sd) = mean_sd(&col(&|r| r.metrics.macro_f1));
        let per_class = |g: &dyn Fn(&MetricsReport) -> [f64; N_CLASSES]| {
            let mut out = [0.0; N_CLASSES];
            for (c, o) in out.iter_mut().enumerate() {
                *o = mean_sd(&col(&|r| g(&r.metrics)[c])).0;
            }
            out
        };
        Summary {
            folds: folds.len(),
            accuracy_mean,
            accuracy_sd,
            macro_f1_mean,
            macro_f1_sd,
            precision: per_class(&|m| m.precision),
            recall: per_class(&|m| m.recall),
            f1: per_class(&|m| m.f1),
            train_size_mean: mean_sd(&col(&|r| r.train_size as f64)).0,
            train_time_s: mean_sd(&col(&|r| r.metrics.train_time_s)).0,
            inference_time_ms_per_sample: mean_sd(&col(&|r| r.metrics.inference_time_ms_per_sample)).0,
        }
    }
}

/// One configuration (model, feature subset, combo or user).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub label: String,
    pub model: ModelKind,
    pub features: String,
    pub feature_count: usize,
    pub combo: Option<TrainingCombo>,
    pub user: Option<String>,
    pub summary: Summary,
    pub accuracy_rank: Option<f64>,
    pub macro_f1_rank: Option<f64>,
    /// Folds skipped because the requested training set was empty.
    pub skipped_folds: Vec<usize>,
    pub folds: Vec<FoldRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTests {
    pub accuracy: FriedmanResult,
    pub macro_f1: FriedmanResult,
}

/// Means across users for one personalized training construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionMean {
    pub combo: TrainingCombo,
    pub users: usize,
    pub accuracy: f64,
    pub f1: [f64; N_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub k: usize,
    pub samples: usize,
    pub rows: Vec<ResultRow>,
    pub friedman: Option<RankTests>,
    pub construction_means: Vec<ConstructionMean>,
    pub skipped_users: Vec<String>,
}

impl ExperimentResult {
    /// Copy with every wall-clock field zeroed.
    pub fn without_timing(&self) -> ExperimentResult {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.summary.train_time_s = 0.0;
            row.summary.inference_time_ms_per_sample = 0.0;
            for f in &mut row.folds {
                f.metrics = f.metrics.without_timing();
            }
        }
        r
    }

    pub fn eq_ignoring_timing(&self, other: &ExperimentResult) -> bool {
        self.without_timing() == other.without_timing()
    }

    pub fn row(&self, label: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

pub(crate) struct Evaluator<'a> {
    pub samples: &'a [WindowSample],
    pub labels: Vec<CsClass>,
    pub cfg: &'a PipelineConfig,
}

impl<'a> Evaluator<'a> {
    pub fn new(samples: &'a [WindowSample], cfg: &'a PipelineConfig) -> Self {
        Evaluator {
            samples,
            labels: samples.iter().map(|s| s.label).collect(),
            cfg,
        }
    }

    fn design(&self, idx: &[usize], subset: &FeatureSubset) -> Result<Vec<Vec<f64>>, EvaluationError> {
        idx.iter()
            .map(|&i| subset.project(&self.samples[i].features).map_err(EvaluationError::from))
            .collect()
    }

    /// Fit a standardizer and `kind` on `train`, score on `test`.
    pub fn evaluate(
        &self,
        fold: usize,
        train: &[usize],
        test: &[usize],
        subset: &FeatureSubset,
        kind: ModelKind,
    ) -> Result<(FoldRecord, Vec<CsClass>), EvaluationError> {
        let mut xtr = self.design(train, subset)?;
        let mut xte = self.design(test, subset)?;
        let scaler = fit_standardizer(xtr.iter().map(Vec::as_slice))?;
        for r in xtr.iter_mut().chain(xte.iter_mut()) {
            scaler.transform_in_place(r)?;
        }
        let xtr = Matrix::from_rows(&xtr)?;
        let xte = Matrix::from_rows(&xte)?;
        let ytr: Vec<CsClass> = train.iter().map(|&i| self.labels[i]).collect();
        let yte: Vec<CsClass> = test.iter().map(|&i| self.labels[i]).collect();
        let seed = derive_seed(self.cfg.cv.seed, fold as u64);
        let mut clock = SystemStopwatch::default();
        let (timing, _model, preds) = measure_timing(
            || self.cfg.model.fit(kind, &xtr, &ytr, seed),
            |m| m.predict_rows(&xte),
            test.len(),
            self.cfg.experiment.timing_repeats,
            &mut clock,
        )?;
        let confusion = confusion_matrix(&preds, &yte)?;
        let mut metrics = classification_metrics(&confusion);
        metrics.train_time_s = timing.train_time_s;
        metrics.inference_time_ms_per_sample = timing.inference_ms_per_sample;
        Ok((
            FoldRecord {
                fold,
                train_size: train.len(),
                test_size: test.len(),
                metrics,
                confusion,
            },
            preds,
        ))
    }

    /// Stratified folds over all samples, with levels relative to each fold.
    fn cross_user_folds(&self) -> Result<Vec<(usize, Vec<usize>, SpecificityAssignment)>, EvaluationError> {
        let plan = stratified_kfold(&self.labels, self.cfg.cv.k, self.cfg.cv.seed)?;
        Ok(plan
            .folds
            .into_iter()
            .enumerate()
            .filter(|(_, t)| !t.is_empty())
            .map(|(f, test)| {
                let a = assign_levels(self.samples, &test);
                (f, test, a)
            })
            .collect())
    }

    fn cross_user_row(
        &self,
        folds: &[(usize, Vec<usize>, SpecificityAssignment)],
        label: String,
        subset: &FeatureSubset,
        combo: &TrainingCombo,
        kind: ModelKind,
        allow_empty: bool,
    ) -> Result<ResultRow, EvaluationError> {
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for (f, test, assignment) in folds {
            let train = match compose_training_set(assignment, combo) {
                Ok(t) => t,
                Err(PartitionError::EmptyTrainingSet(_)) => {
                    log::warn!("fold {f}: training set {combo} is empty, skipped");
                    skipped.push(*f);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            records.push(self.evaluate(*f, &train, test, subset, kind)?.0);
        }
        if records.is_empty() && !allow_empty {
            return Err(EvaluationError::NoEvaluatedFolds(label));
        }
        Ok(ResultRow {
            label,
            model: kind,
            features: subset.name.clone(),
            feature_count: subset.len(),
            combo: Some(combo.clone()),
            user: None,
            summary: Summary::from_folds(&records),
            accuracy_rank: None,
            macro_f1_rank: None,
            skipped_folds: skipped,
            folds: records,
        })
    }

    fn result(&self, kind: ExperimentKind, rows: Vec<ResultRow>) -> ExperimentResult {
        ExperimentResult {
            kind,
            config_hash: self.cfg.hash(),
            seed: self.cfg.cv.seed,
            k: self.cfg.cv.k,
            samples: self.samples.len(),
            rows,
            friedman: None,
            construction_means: Vec::new(),
            skipped_users: Vec::new(),
        }
    }

    fn cross_user_combo(&self) -> TrainingCombo {
        self.cfg
            .experiment
            .combo
            .clone()
            .unwrap_or_else(TrainingCombo::all_user_specific)
    }

    fn compare_models(&self) -> Result<ExperimentResult, EvaluationError> {
        let folds = self.cross_user_folds()?;
        let subset = self.cfg.subset_or("all40")?;
        let combo = self.cross_user_combo();
        let mut rows = ModelKind::ALL
            .iter()
            .map(|&k| self.cross_user_row(&folds, k.label().to_string(), &subset, &combo, k, false))
            .collect::<Result<Vec<_>, _>>()?;
        // Friedman blocks are the folds every model evaluated.
        let common: BTreeSet<usize> = rows
            .iter()
            .map(|r| r.folds.iter().map(|f| f.fold).collect::<BTreeSet<_>>())
            .reduce(|a, b| &a & &b)
            .unwrap_or_default();
        let matrix = |g: fn(&MetricsReport) -> f64| -> Vec<Vec<f64>> {
            common
                .iter()
                .map(|&f| {
                    rows.iter()
                        .map(|r| g(&r.folds.iter().find(|x| x.fold == f).expect("common fold").metrics))
                        .collect()
                })
                .collect()
        };
        let friedman = match (
            friedman_test(&matrix(|m| m.accuracy), true),
            friedman_test(&matrix(|m| m.macro_f1), true),
        ) {
            (Ok(accuracy), Ok(macro_f1)) => Some(RankTests { accuracy, macro_f1 }),
            _ => None,
        };
        if let Some(t) = &friedman {
            for (j, row) in rows.iter_mut().enumerate() {
                row.accuracy_rank = Some(t.accuracy.mean_ranks[j]);
                row.macro_f1_rank = Some(t.macro_f1.mean_ranks[j]);
            }
        }
        let mut res = self.result(ExperimentKind::CompareModels, rows);
        res.friedman = friedman;
        Ok(res)
    }

    fn ablate_features(&self) -> Result<ExperimentResult, EvaluationError> {
        let folds = self.cross_user_folds()?;
        let combo = self.cross_user_combo();
        let reg = registry();
        let mut configs: Vec<(String, FeatureSubset)> = FeatureGroup::ALL
            .iter()
            .map(|&g| (g.label().to_string(), reg.group_subset(g)))
            .collect();
        for (name, label) in [
            ("head7", "Head QRot. + Head Eul."),
            ("eye16", "Pupil Pos. + Eye Ori. + Comb. Gaze Ori."),
            (
                "optimal23",
                "Pupil Pos. + Eye Ori. + Comb. Gaze Ori. + Head QRot. + Head Eul.",
            ),
            ("all40", "All Eye and Head"),
        ] {
            configs.push((label.to_string(), reg.resolve_subset(name)?));
        }
        let kind = self.cfg.model.kind;
        let rows = configs
            .into_iter()
            .map(|(label, subset)| self.cross_user_row(&folds, label, &subset, &combo, kind, false))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.result(ExperimentKind::AblateFeatures, rows))
    }

    fn ablate_levels(&self) -> Result<ExperimentResult, EvaluationError> {
        let folds = self.cross_user_folds()?;
        let subset = self.cfg.subset_or("optimal23")?;
        let kind = self.cfg.model.kind;
        let rows = TrainingCombo::cross_user_combos()
            .into_iter()
            .map(|combo| self.cross_user_row(&folds, combo.label(), &subset, &combo, kind, true))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.result(ExperimentKind::AblateLevels, rows))
    }

    fn personalize(&self) -> Result<ExperimentResult, EvaluationError> {
        let subset = self.cfg.subset_or("optimal23")?;
        let kind = self.cfg.model.kind;
        let personalized = self
            .cfg
            .experiment
            .combo
            .clone()
            .unwrap_or_else(TrainingCombo::personalized);
        let constructions = [TrainingCombo::baseline(), personalized];
        let users: Vec<String> = match &self.cfg.experiment.target_user {
            Some(u) => vec![u.clone()],
            None => self
                .samples
                .iter()
                .map(|s| s.user().to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let mut skipped_users = Vec::new();
        let mut per_construction: Vec<Vec<ResultRow>> = vec![Vec::new(); constructions.len()];
        for user in &users {
            let classes = user_class_count(self.samples, &self.labels, user);
            if classes < 2 {
                if self.cfg.experiment.target_user.is_some() {
                    return Err(EvaluationError::UserIneligible {
                        user: user.clone(),
                        classes,
                    });
                }
                log::warn!("user {user} has {classes} class(es), skipped");
                skipped_users.push(user.clone());
                continue;
            }
            let plan = personalized_plan(self.samples, &self.labels, user, self.cfg.cv.k, self.cfg.cv.seed)?;
            for (ci, combo) in constructions.iter().enumerate() {
                let mut records = Vec::new();
                for pf in &plan {
                    let train = compose_training_set(&pf.assignment, combo)?;
                    records.push(self.evaluate(pf.fold, &train, &pf.test, &subset, kind)?.0);
                }
                per_construction[ci].push(ResultRow {
                    label: combo.label(),
                    model: kind,
                    features: subset.name.clone(),
                    feature_count: subset.len(),
                    combo: Some(combo.clone()),
                    user: Some(user.clone()),
                    summary: Summary::from_folds(&records),
                    accuracy_rank: None,
                    macro_f1_rank: None,
                    skipped_folds: Vec::new(),
                    folds: records,
                });
            }
        }
        if per_construction[0].is_empty() {
            return Err(EvaluationError::NoEvaluatedFolds("no eligible users".into()));
        }
        let construction_means = constructions
            .iter()
            .zip(&per_construction)
            .map(|(combo, rows)| {
                let n = rows.len() as f64;
                let mut f1 = [0.0; N_CLASSES];
                for r in rows {
                    for c in 0..N_CLASSES {
                        f1[c] += r.summary.f1[c] / n;
                    }
                }
                ConstructionMean {
                    combo: combo.clone(),
                    users: rows.len(),
                    accuracy: rows.iter().map(|r| r.summary.accuracy_mean).sum::<f64>() / n,
                    f1,
                }
            })
            .collect();
        let mut res = self.result(ExperimentKind::Personalize, per_construction.concat());
        res.construction_means = construction_means;
        res.skipped_users = skipped_users;
        Ok(res)
    }
}

/// Run one experiment over preprocessed window samples.
pub fn run_experiment(
    kind: ExperimentKind,
    samples: &[WindowSample],
    cfg: &PipelineConfig,
) -> Result<ExperimentResult, EvaluationError> {
    if samples.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let ev = Evaluator::new(samples, cfg);
    match kind {
        ExperimentKind::CompareModels => ev.compare_models(),
        ExperimentKind::AblateFeatures => ev.ablate_features(),
        ExperimentKind::AblateLevels => ev.ablate_levels(),
        ExperimentKind::Personalize => ev.personalize(),
    }
}
