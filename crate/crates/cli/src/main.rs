use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use csdetect_core::calibrate::{run_calibration, Schedule};
use csdetect_core::dataio::{
    generate_synthetic, read_dataset, validate_dataset_with, write_dataset, ColumnMapping, SynthSpec, REPORTS_FILE,
    TRACKING_FILE,
};
use csdetect_core::evaluation::{emit_report, from_json, ReportFormat};
use csdetect_core::features::registry;
use csdetect_core::preprocess::preprocess_dataset;
use csdetect_core::{run_experiment, Dataset, ExperimentKind, PipelineConfig, WindowSample};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "csdetect",
    version,
    about = "Cybersickness severity detection from eye and head tracking"
)]
struct Cli {
    /// Pipeline config (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `cv.seed`; for `synth`, the generator seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding tracking.csv and reports.csv.
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    tracking: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    reports: Option<PathBuf>,
    /// Header rename file (`source,canonical` per line).
    #[arg(long, value_name = "PATH")]
    mapping: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load raw files (optionally through a column mapping), check and
    /// preprocess them, and write canonical CSVs.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        reports_per_session: Option<usize>,
        /// Full generator spec (TOML); other flags override it.
        #[arg(long, value_name = "PATH")]
        spec: Option<PathBuf>,
    },
    /// Summarise sessions and flag reports with incomplete segments.
    Validate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run an experiment and write its reports.
    Run {
        /// compare-models, ablate-features, ablate-levels or personalize.
        experiment: ExperimentKind,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated report formats (json, csv, md).
        #[arg(long, value_delimiter = ',')]
        formats: Option<Vec<ReportFormat>>,
    },
    /// Replay pretrain-then-calibrate for one user.
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        user: String,
        #[arg(long, default_value = "per-segment", value_name = "per-segment|all-at-once")]
        schedule: Schedule,
    },
    /// Re-render a JSON result in other formats.
    Report {
        input: PathBuf,
        #[arg(long, value_delimiter = ',')]
        formats: Option<Vec<ReportFormat>>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn usage_err(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => {
                    eprintln!("\n{}", Cli::command().render_help());
                    ExitCode::from(1)
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage_err("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(usage_err)?;
    }
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p).map_err(usage_err)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.cv.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.io.out_dir = o.clone();
    }
    match cli.command {
        Command::Ingest { data } => ingest(&cfg, &data, cli.out.as_deref()),
        Command::Synth {
            users,
            scenarios,
            reports_per_session,
            spec,
        } => {
            let mut s = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(usage_err)?;
                    toml::from_str::<SynthSpec>(&text).map_err(usage_err)?
                }
                None => SynthSpec::default(),
            };
            if let Some(v) = users {
                s.n_users = v;
            }
            if let Some(v) = scenarios {
                s.n_scenarios = v;
            }
            if let Some(v) = reports_per_session {
                s.reports_per_session = v;
            }
            if let Some(v) = cli.seed {
                s.seed = v;
            }
            let d = generate_synthetic(&s).map_err(usage_err)?;
            let dir = cli.out.unwrap_or_else(|| PathBuf::from("data"));
            let (t, r) = write_dataset(&d, &dir).map_err(data_err)?;
            println!(
                "{} frames -> {}\n{} reports -> {}",
                d.frame_count(),
                t.display(),
                d.report_count(),
                r.display()
            );
            Ok(())
        }
        Command::Validate { data } => {
            let d = load(&cfg, &data)?;
            let mut span = cfg.preprocess.segment;
            span.frame_rate = cfg.preprocess.frame_rate;
            println!("{}", validate_dataset_with(&d, &span));
            Ok(())
        }
        Command::Run {
            experiment,
            data,
            formats,
        } => {
            let samples = windows(&cfg, &data)?;
            let result = run_experiment(experiment, &samples, &cfg).map_err(data_err)?;
            for r in &result.rows {
                let who = r.user.as_deref().map(|u| format!(" [{u}]")).unwrap_or_default();
                println!(
                    "{}{}: accuracy {:.4} ± {:.4}, macro-F1 {:.4} ({} folds)",
                    r.label,
                    who,
                    r.summary.accuracy_mean,
                    r.summary.accuracy_sd,
                    r.summary.macro_f1_mean,
                    r.summary.folds
                );
            }
            let formats = formats.unwrap_or_else(|| cfg.io.formats.clone());
            for p in emit_report(&result, &cfg.io.out_dir, &formats, &timestamp()).map_err(data_err)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Calibrate { data, user, schedule } => {
            let samples = windows(&cfg, &data)?;
            let session = run_calibration(&samples, &cfg, &user, schedule).map_err(data_err)?;
            for s in &session.steps {
                println!(
                    "step {}: {} training windows, accuracy {:.4}, train {:.3} s",
                    s.step, s.train_size, s.metrics.accuracy, s.train_time_s
                );
            }
            std::fs::create_dir_all(&cfg.io.out_dir).map_err(data_err)?;
            let path = cfg
                .io
                .out_dir
                .join(format!("calibrate-{user}-{schedule}-{}.csv", timestamp()));
            std::fs::write(&path, session.to_csv()).map_err(data_err)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Report { input, formats } => {
            let text = std::fs::read_to_string(&input).map_err(data_err)?;
            let result = from_json(&text).map_err(data_err)?;
            let formats = formats.unwrap_or_else(|| vec![ReportFormat::Csv, ReportFormat::Md]);
            for p in emit_report(&result, &cfg.io.out_dir, &formats, &timestamp()).map_err(data_err)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
}

fn resolve(
    explicit: &Option<PathBuf>,
    dir: &Option<PathBuf>,
    file: &str,
    configured: &Option<PathBuf>,
    flag: &str,
) -> Result<PathBuf, CliError> {
    explicit
        .clone()
        .or_else(|| dir.as_ref().map(|d| d.join(file)))
        .or_else(|| configured.clone())
        .ok_or_else(|| usage_err(format!("no {file}: pass --{flag} or --data-dir, or set io.{flag}")))
}

fn load(cfg: &PipelineConfig, a: &DataArgs) -> Result<Dataset, CliError> {
    let tracking = resolve(&a.tracking, &a.data_dir, TRACKING_FILE, &cfg.io.tracking, "tracking")?;
    let reports = resolve(&a.reports, &a.data_dir, REPORTS_FILE, &cfg.io.reports, "reports")?;
    let mapping = match a.mapping.as_ref().or(cfg.io.column_mapping.as_ref()) {
        Some(p) => Some(ColumnMapping::from_file(p).map_err(data_err)?),
        None => None,
    };
    read_dataset(&tracking, &reports, registry(), mapping.as_ref()).map_err(data_err)
}

fn windows(cfg: &PipelineConfig, a: &DataArgs) -> Result<Vec<WindowSample>, CliError> {
    let d = load(cfg, a)?;
    let p = preprocess_dataset(&d, &cfg.preprocess).map_err(data_err)?;
    for w in &p.warnings {
        log::debug!("{w}");
    }
    if !p.warnings.is_empty() {
        log::info!("{} preprocessing warning(s)", p.warnings.len());
    }
    log::info!("{} windows from {} segments", p.samples.len(), p.segment_count);
    Ok(p.samples)
}

fn ingest(cfg: &PipelineConfig, a: &DataArgs, out: Option<&Path>) -> Result<(), CliError> {
    let d = load(cfg, a)?;
    let mut span = cfg.preprocess.segment;
    span.frame_rate = cfg.preprocess.frame_rate;
    let report = validate_dataset_with(&d, &span);
    let p = preprocess_dataset(&d, &cfg.preprocess).map_err(data_err)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("data"));
    let (t, r) = write_dataset(&d, &dir).map_err(data_err)?;
    println!(
        "{} sessions, {} frames, {} reports, {} coverage warning(s)\n{} segments, {} windows\nwrote {} and {}",
        report.sessions.len(),
        d.frame_count(),
        d.report_count(),
        report.warning_count(),
        p.segment_count,
        p.samples.len(),
        t.display(),
        r.display()
    );
    Ok(())
}
