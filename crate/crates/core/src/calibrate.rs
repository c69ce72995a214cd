//! Pretrain on a user's cross-scenario data, then refit as that user's
//! same-segment (L3) calibration windows arrive.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::evaluation::{EvaluationError, Evaluator, MetricsReport};
use crate::learners::ModelKind;
use crate::partition::{personalized_plan, user_class_count, SpecificityLevel};
use crate::preprocess::{CsClass, WindowSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// One refit per L3 segment, in segment order.
    PerSegment,
    /// A single refit with every L3 segment.
    AllAtOnce,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::PerSegment => "per-segment",
            Schedule::AllAtOnce => "all-at-once",
        })
    }
}

impl FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-segment" => Ok(Schedule::PerSegment),
            "all-at-once" => Ok(Schedule::AllAtOnce),
            other => Err(format!("unknown schedule `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub step: usize,
    /// L3 segments added at this step.
    pub added_segments: Vec<u64>,
    pub train_size: usize,
    pub train_time_s: f64,
    pub metrics: MetricsReport,
    pub predictions: Vec<CsClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSession {
    pub user: String,
    pub fold: usize,
    pub model: ModelKind,
    pub features: String,
    pub schedule: Schedule,
    /// L0 and L1 indices.
    pub pretrain: Vec<usize>,
    pub test: Vec<usize>,
    pub steps: Vec<CalibrationStep>,
}

impl CalibrationSession {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,added_segments,train_size,train_time_s,accuracy,macro_f1,f1_none,f1_low,f1_medium,f1_high\n",
        );
        for s in &self.steps {
            let segs: Vec<String> = s.added_segments.iter().map(u64::to_string).collect();
            let m = &s.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                s.step,
                segs.join(";"),
                s.train_size,
                s.train_time_s,
                m.accuracy,
                m.macro_f1,
                m.f1[0],
                m.f1[1],
                m.f1[2],
                m.f1[3]
            ));
        }
        out
    }
}

/// Uses the first non-empty fold of the user's personalized plan as the fixed
/// test set. Every step refits from scratch on sorted indices, so the final
/// step reproduces the personalized L0 + L1 + L3 fit exactly.
pub fn run_calibration(
    samples: &[WindowSample],
    cfg: &PipelineConfig,
    user: &str,
    schedule: Schedule,
) -> Result<CalibrationSession, EvaluationError> {
    let ev = Evaluator::new(samples, cfg);
    let classes = user_class_count(samples, &ev.labels, user);
    if classes < 2 {
        return Err(EvaluationError::UserIneligible {
            user: user.to_string(),
            classes,
        });
    }
    let plan = personalized_plan(samples, &ev.labels, user, cfg.cv.k, cfg.cv.seed)?;
    let pf = plan
        .into_iter()
        .next()
        .ok_or_else(|| EvaluationError::NoEvaluatedFolds(user.to_string()))?;
    let a = &pf.assignment;
    let mut pretrain = a.indices(SpecificityLevel::L0);
    pretrain.extend(a.indices(SpecificityLevel::L1));
    pretrain.sort_unstable();
    let l3 = a.indices(SpecificityLevel::L3);
    let segments: Vec<u64> = l3
        .iter()
        .map(|&i| samples[i].segment_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let batches: Vec<Vec<u64>> = match schedule {
        Schedule::PerSegment => segments.iter().map(|&s| vec![s]).collect(),
        Schedule::AllAtOnce if segments.is_empty() => Vec::new(),
        Schedule::AllAtOnce => vec![segments.clone()],
    };
    let subset = cfg.subset_or("optimal23")?;
    let kind = cfg.model.kind;
    let mut train = pretrain.clone();
    let mut steps = Vec::with_capacity(batches.len() + 1);
    for step in 0..=batches.len() {
        let added = if step == 0 {
            Vec::new()
        } else {
            batches[step - 1].clone()
        };
        if !added.is_empty() {
            train.extend(l3.iter().copied().filter(|&i| added.contains(&samples[i].segment_id)));
            train.sort_unstable();
        }
        let (record, predictions) = ev.evaluate(pf.fold, &train, &pf.test, &subset, kind)?;
        steps.push(CalibrationStep {
            step,
            added_segments: added,
            train_size: train.len(),
            train_time_s: record.metrics.train_time_s,
            metrics: record.metrics,
            predictions,
        });
    }
    Ok(CalibrationSession {
        user: user.to_string(),
        fold: pf.fold,
        model: kind,
        features: subset.name,
        schedule,
        pretrain,
        test: pf.test,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SynthSpec};
    use crate::learners::GbtParams;
    use crate::preprocess::{preprocess_dataset, PreprocessConfig};

    fn setup() -> (Vec<WindowSample>, PipelineConfig) {
        let spec = SynthSpec {
            n_users: 3,
            n_scenarios: 2,
            reports_per_session: 4,
            seed: 3,
            ..SynthSpec::default()
        };
        let d = generate_synthetic(&spec).unwrap();
        let samples = preprocess_dataset(&d, &PreprocessConfig::default()).unwrap().samples;
        let mut cfg = PipelineConfig::default();
        cfg.cv.k = 3;
        cfg.model.gbt = GbtParams {
            n_rounds: 10,
            ..GbtParams::default()
        };
        (samples, cfg)
    }

    #[test]
    fn steps_grow_and_end_at_the_personalized_fit() {
        let (samples, cfg) = setup();
        let s = run_calibration(&samples, &cfg, "u02", Schedule::PerSegment).unwrap();
        assert!(s.steps.len() >= 2);
        assert_eq!(s.steps[0].train_size, s.pretrain.len());
        for w in s.steps.windows(2) {
            assert!(w[1].train_size > w[0].train_size);
        }
        assert!(s.steps.iter().all(|st| st.train_time_s.is_finite()));

        let ev = Evaluator::new(&samples, &cfg);
        let plan = personalized_plan(&samples, &ev.labels, "u02", cfg.cv.k, cfg.cv.seed).unwrap();
        let subset = cfg.subset_or("optimal23").unwrap();
        let (rec, preds) = ev
            .evaluate(plan[0].fold, &plan[0].train, &plan[0].test, &subset, ModelKind::Gbt)
            .unwrap();
        let last = s.steps.last().unwrap();
        assert_eq!(last.train_size, plan[0].train.len());
        assert_eq!(last.predictions, preds);
        assert_eq!(last.metrics.without_timing(), rec.metrics.without_timing());

        let once = run_calibration(&samples, &cfg, "u02", Schedule::AllAtOnce).unwrap();
        assert_eq!(once.steps.len(), 2);
        assert_eq!(once.steps[1].predictions, preds);
        let csv = s.to_csv();
        assert_eq!(csv.lines().count(), s.steps.len() + 1);
    }

    #[test]
    fn ineligible_user_is_rejected() {
        let (mut samples, cfg) = setup();
        for w in samples.iter_mut().filter(|w| w.user() == "u01") {
            w.label = CsClass::High;
        }
        assert!(matches!(
            run_calibration(&samples, &cfg, "u01", Schedule::PerSegment),
            Err(EvaluationError::UserIneligible { .. })
        ));
    }

    #[test]
    fn schedule_names() {
        assert_eq!("per-segment".parse::<Schedule>().unwrap(), Schedule::PerSegment);
        assert_eq!(Schedule::AllAtOnce.to_string(), "all-at-once");
        assert!("weekly".parse::<Schedule>().is_err());
    }
}
