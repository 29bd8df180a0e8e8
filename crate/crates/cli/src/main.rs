use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hr_sentinel::stream::{human_mode_for_stdout, ErrorPolicy, SinkMode};
use hr_sentinel_cli::commands;
use hr_sentinel_cli::RunConfig;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "hr-sentinel",
    version,
    about = "Real-time accuracy warnings for wearable heart-rate readings"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration with `section.key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for data generation and training.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Filter threshold between acceptable and marginal (bpm).
    #[arg(long, global = true, value_name = "X")]
    tau_a: Option<f64>,
    /// Filter threshold between marginal and unacceptable (bpm).
    #[arg(long, global = true, value_name = "Y")]
    tau_b: Option<f64>,
    /// Comma-separated thresholds for the evaluation sweep.
    #[arg(long, global = true, value_name = "CSV")]
    taus: Option<String>,
    /// Fraction of subjects (sorted by id) used for training.
    #[arg(long, global = true, value_name = "F")]
    train_fraction: Option<f64>,
    /// Abort on the first bad input (default).
    #[arg(long, global = true, conflicts_with = "skip_errors")]
    strict: bool,
    /// Report and skip bad inputs instead of aborting.
    #[arg(long, global = true)]
    skip_errors: bool,
    /// Print the command summary as one JSON document.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic paired device/reference recordings.
    GenData {
        /// Output directory for the per-subject CSVs and truth files.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Number of subjects.
        #[arg(long, value_name = "N")]
        subjects: Option<usize>,
        /// Seconds per subject.
        #[arg(long, value_name = "S")]
        duration: Option<usize>,
    },
    /// Synchronize recordings, cut windows and split subjects.
    Prepare {
        /// Directory holding `<subject>_ppg.csv` / `<subject>_ecg.csv` pairs.
        #[arg(long, value_name = "DIR")]
        raw: PathBuf,
        /// Window dataset to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train the error estimator.
    Train {
        /// Window dataset from `prepare`.
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        /// Checkpoint to write.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Training log CSV (default: <model>.log.csv).
        #[arg(long, value_name = "PATH")]
        log: Option<PathBuf>,
        /// Override estimator.max_epochs.
        #[arg(long, value_name = "N")]
        max_epochs: Option<usize>,
    },
    /// Train one model per hyperparameter combination and keep the best.
    GridSearch {
        /// Window dataset from `prepare`.
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        /// Checkpoint of the best cell.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// `key=v1;v2;...` over estimator keys; repeatable.
        #[arg(long = "grid", value_name = "KEY=VALUES")]
        grid: Vec<String>,
        /// Epoch limit for every cell.
        #[arg(long, value_name = "N")]
        max_epochs: Option<usize>,
    },
    /// Threshold sweep and tolerance table on the test subjects.
    Eval {
        /// Window dataset from `prepare`.
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        /// Trained checkpoint.
        #[arg(long, value_name = "PATH", required_unless_present = "oracle")]
        model: Option<PathBuf>,
        /// Report directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Use the true error as the prediction (checks the metrics only).
        #[arg(long)]
        oracle: bool,
    },
    /// Label a live or recorded heart-rate stream.
    Stream {
        /// Trained checkpoint.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Input CSV; stdin when omitted or `-`.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        /// `machine` prints one CSV row per reading after a header.
        #[arg(long, value_enum, default_value_t = Format::Human)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Human,
    Machine,
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(v) = common.tau_a {
        cfg.tau_a = v;
    }
    if let Some(v) = common.tau_b {
        cfg.tau_b = v;
    }
    if let Some(v) = &common.taus {
        cfg.set("eval.taus", v).context("--taus")?;
    }
    if let Some(v) = common.train_fraction {
        cfg.train_fraction = v;
    }
    Ok(cfg)
}

fn emit<T: Serialize>(json: bool, summary: &T) -> Result<()> {
    if json {
        let mut out = io::stdout().lock();
        serde_json::to_writer_pretty(&mut out, summary)?;
        writeln!(out)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    hr_sentinel_cli::configure_threads()?;
    let common = &cli.common;
    let mut cfg = run_config(common)?;
    let policy = if common.skip_errors {
        ErrorPolicy::Skip
    } else {
        ErrorPolicy::Strict
    };
    let json = common.json;
    let mut stdout = io::stdout().lock();
    // with --json the human report is suppressed
    let mut sink = io::sink();
    let out: &mut dyn Write = if json { &mut sink } else { &mut stdout };

    match cli.command {
        Command::GenData {
            out: dir,
            subjects,
            duration,
        } => {
            if let Some(n) = subjects {
                cfg.synth.n_subjects = n;
            }
            if let Some(d) = duration {
                cfg.synth.duration_s = d;
            }
            let cfg = cfg.finish()?;
            let s = commands::gen_data(&cfg, &dir, out)?;
            emit(json, &s)
        }
        Command::Prepare { raw, out: path } => {
            let cfg = cfg.finish()?;
            let s = commands::prepare(&cfg, &raw, &path, policy, out)?;
            emit(json, &s)
        }
        Command::Train {
            dataset,
            model,
            log,
            max_epochs,
        } => {
            if let Some(e) = max_epochs {
                cfg.estimator.max_epochs = e;
            }
            let cfg = cfg.finish()?;
            let s = commands::train(&cfg, &dataset, &model, log.as_deref(), out)?;
            emit(json, &s)
        }
        Command::GridSearch {
            dataset,
            model,
            grid,
            max_epochs,
        } => {
            for g in &grid {
                let (key, values) = g
                    .split_once('=')
                    .with_context(|| format!("--grid {g:?}: expected key=v1;v2"))?;
                cfg.set(&format!("grid.{}", key.trim()), values)?;
            }
            if max_epochs.is_some() {
                cfg.grid.max_epochs = max_epochs;
            }
            let cfg = cfg.finish()?;
            let s = commands::grid_search(&cfg, &dataset, &model, out)?;
            emit(json, &s)
        }
        Command::Eval {
            dataset,
            model,
            out: dir,
            oracle,
        } => {
            let cfg = cfg.finish()?;
            let s = commands::eval(&cfg, model.as_deref(), &dataset, &dir, oracle, out)?;
            emit(json, &s)
        }
        Command::Stream { model, input, format } => {
            let cfg = cfg.finish()?;
            let mode = match format {
                Format::Machine => SinkMode::Machine,
                Format::Human => human_mode_for_stdout(),
            };
            let input = input.filter(|p| p != Path::new("-"));
            let summary = commands::stream(&cfg, &model, input.as_deref(), policy, mode, &mut stdout)?;
            let counts = summary
                .counts
                .iter()
                .map(|(l, n)| format!("{l}={n}"))
                .collect::<Vec<_>>()
                .join(" ");
            eprintln!(
                "{} readings ({counts}), {} skipped, max latency {} us",
                summary.total(),
                summary.skipped,
                summary.max_latency_us
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
