use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiments::{ExperimentKind, ExperimentResult, ResultRow};
use super::EvaluationError;
use crate::preprocess::CsClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Md];

    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Md => "md",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = EvaluationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(EvaluationError::UnknownFormat(other.to_string())),
        }
    }
}

/// `<experiment>-<timestamp>-<confighash>`
pub fn report_stem(result: &ExperimentResult, timestamp: &str) -> String {
    format!("{}-{}-{}", result.kind.key(), timestamp, result.config_hash)
}

pub fn to_json(result: &ExperimentResult) -> String {
    serde_json::to_string_pretty(result).expect("results serialize")
}

pub fn from_json(text: &str) -> Result<ExperimentResult, EvaluationError> {
    serde_json::from_str(text).map_err(|e| EvaluationError::Report(e.to_string()))
}

fn class_headers(prefix: &str) -> impl Iterator<Item = String> + '_ {
    CsClass::ALL
        .iter()
        .map(move |c| format!("{prefix}_{}", c.to_string().to_lowercase()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per configuration.
pub fn to_csv(result: &ExperimentResult) -> Result<String, EvaluationError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "experiment",
        "label",
        "model",
        "features",
        "feature_count",
        "combo",
        "user",
        "folds",
        "train_size_mean",
        "accuracy_mean",
        "accuracy_sd",
        "macro_f1_mean",
        "macro_f1_sd",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(class_headers("precision"));
    header.extend(class_headers("recall"));
    header.extend(class_headers("f1"));
    header.extend(
        [
            "accuracy_rank",
            "macro_f1_rank",
            "train_time_s",
            "inference_ms_per_sample",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let csv_err = |e: csv::Error| EvaluationError::Report(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in &result.rows {
        let s = &r.summary;
        let mut rec = vec![
            result.kind.key().to_string(),
            r.label.clone(),
            r.model.key().to_string(),
            r.features.clone(),
            r.feature_count.to_string(),
            r.combo.as_ref().map(|c| c.to_string()).unwrap_or_default(),
            r.user.clone().unwrap_or_default(),
            s.folds.to_string(),
            s.train_size_mean.to_string(),
            s.accuracy_mean.to_string(),
            s.accuracy_sd.to_string(),
            s.macro_f1_mean.to_string(),
            s.macro_f1_sd.to_string(),
        ];
        for v in s.precision.iter().chain(&s.recall).chain(&s.f1) {
            rec.push(v.to_string());
        }
        rec.push(opt(r.accuracy_rank));
        rec.push(opt(r.macro_f1_rank));
        rec.push(s.train_time_s.to_string());
        rec.push(s.inference_time_ms_per_sample.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| EvaluationError::Report(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const CLASS_COLS: &str = "P N | P L | P M | P H | R N | R L | R M | R H | F1 N | F1 L | F1 M | F1 H";

fn per_class_cells(r: &ResultRow) -> String {
    let s = &r.summary;
    s.precision
        .iter()
        .chain(&s.recall)
        .chain(&s.f1)
        .map(|v| format!("{v:.2}"))
        .collect::<Vec<_>>()
        .join(" | ")
}

fn separator(cols: usize) -> String {
    format!("|{}\n", "---|".repeat(cols))
}

/// A markdown table laid out like the corresponding published table.
pub fn to_markdown(result: &ExperimentResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} (k = {}, seed = {}, {} samples)\n",
        result.kind.key(),
        result.k,
        result.seed,
        result.samples
    );
    match result.kind {
        ExperimentKind::CompareModels => {
            let _ = writeln!(
                out,
                "| Model | Train Time (s) | Inf. Time/Sample (ms) | {CLASS_COLS} | Acc. (Mean±Std) | Acc. Avg Rank | F1-Macro (Mean±Std) | F1-Macro Avg Rank |"
            );
            out.push_str(&separator(19));
            for r in &result.rows {
                let s = &r.summary;
                let _ = writeln!(
                    out,
                    "| {} | {:.3} | {:.3} | {} | {:.2}±{:.2} | {} | {:.2}±{:.2} | {} |",
                    r.label,
                    s.train_time_s,
                    s.inference_time_ms_per_sample,
                    per_class_cells(r),
                    s.accuracy_mean,
                    s.accuracy_sd,
                    r.accuracy_rank.map(|v| format!("{v:.2}")).unwrap_or_default(),
                    s.macro_f1_mean,
                    s.macro_f1_sd,
                    r.macro_f1_rank.map(|v| format!("{v:.2}")).unwrap_or_default(),
                );
            }
            if let Some(t) = &result.friedman {
                let _ = writeln!(
                    out,
                    "\nFriedman test on accuracy: χ²_F = {:.2}, p = {:.3e} (N = {}, k = {})",
                    t.accuracy.chi2, t.accuracy.p_value, t.accuracy.n, t.accuracy.k
                );
                let _ = writeln!(
                    out,
                    "Friedman test on F1-macro: χ²_F = {:.2}, p = {:.3e} (N = {}, k = {})",
                    t.macro_f1.chi2, t.macro_f1.p_value, t.macro_f1.n, t.macro_f1.k
                );
            }
        }
        ExperimentKind::AblateFeatures => {
            let _ = writeln!(out, "| Feature Amount | Features | Acc. | {CLASS_COLS} |");
            out.push_str(&separator(15));
            for r in &result.rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {:.2} | {} |",
                    r.feature_count,
                    r.label,
                    r.summary.accuracy_mean,
                    per_class_cells(r)
                );
            }
        }
        ExperimentKind::AblateLevels => {
            let _ = writeln!(
                out,
                "| Training Data Construction | Sample Size | Acc. | {CLASS_COLS} |"
            );
            out.push_str(&separator(15));
            for r in &result.rows {
                if r.folds.is_empty() {
                    let _ = writeln!(out, "| {} | 0 | n/a |{}", r.label, " n/a |".repeat(12));
                    continue;
                }
                let _ = writeln!(
                    out,
                    "| {} | {:.0} | {:.2} | {} |",
                    r.label,
                    r.summary.train_size_mean,
                    r.summary.accuracy_mean,
                    per_class_cells(r)
                );
            }
        }
        ExperimentKind::Personalize => {
            let _ = writeln!(
                out,
                "| Training Data Construction | User | Acc. | F1 N | F1 L | F1 M | F1 H |"
            );
            out.push_str(&separator(7));
            for mean in &result.construction_means {
                let label = mean.combo.label();
                for r in result.rows.iter().filter(|r| r.combo.as_ref() == Some(&mean.combo)) {
                    let f = &r.summary.f1;
                    let _ = writeln!(
                        out,
                        "| {} | {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} |",
                        label,
                        r.user.as_deref().unwrap_or(""),
                        r.summary.accuracy_mean,
                        f[0],
                        f[1],
                        f[2],
                        f[3]
                    );
                }
                let f = &mean.f1;
                let _ = writeln!(
                    out,
                    "| {} | **Mean** | **{:.2}** | **{:.2}** | **{:.2}** | **{:.2}** | **{:.2}** |",
                    label, mean.accuracy, f[0], f[1], f[2], f[3]
                );
            }
            if !result.skipped_users.is_empty() {
                let _ = writeln!(
                    out,
                    "\nSkipped (fewer than 2 classes): {}",
                    result.skipped_users.join(", ")
                );
            }
        }
    }
    out
}

/// Writes one file per requested format and returns their paths.
pub fn emit_report(
    result: &ExperimentResult,
    dir: impl AsRef<Path>,
    formats: &[ReportFormat],
    timestamp: &str,
) -> Result<Vec<PathBuf>, EvaluationError> {
    if formats.is_empty() {
        return Ok(Vec::new());
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let stem = report_stem(result, timestamp);
    let mut written = Vec::new();
    for f in formats {
        let body = match f {
            ReportFormat::Json => to_json(result),
            ReportFormat::Csv => to_csv(result)?,
            ReportFormat::Md => to_markdown(result),
        };
        let path = dir.join(format!("{stem}.{}", f.extension()));
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
