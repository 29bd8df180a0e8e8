//! One function per subcommand. Each takes the validated [`RunConfig`], does
//! its work, writes human-readable progress to `out` and returns a summary
//! that `main` can also print as JSON.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use hr_sentinel::estimator::{
    self, load_model, save_model, ErrorPredictor, EstimatorModel, GridOptions, OraclePredictor,
};
use hr_sentinel::ingest::{parse_series, synchronize, SeriesRows};
use hr_sentinel::metrics::{
    predict_pairs, sweep_csv, sweep_text, threshold_sweep, tolerance_csv, tolerance_table, tolerance_text, SweepRow,
    ToleranceTable,
};
use hr_sentinel::stream::{
    run_stream_with, ErrorPolicy, LineSink, SinkMode, StreamState, StreamSummary, MACHINE_HEADER,
};
use hr_sentinel::synth::{self, ECG_SENSOR, PPG_SENSOR};
use hr_sentinel::windowing::{read_dataset, split_by_subject, write_dataset, Dataset, Split};
use hr_sentinel::{HrSample, SyncedSeries};
use serde::Serialize;

use crate::config::RunConfig;

pub const SWEEP_CSV: &str = "threshold_sweep.csv";
pub const SWEEP_TXT: &str = "threshold_sweep.txt";
pub const TOLERANCE_CSV: &str = "tolerance_table.csv";
pub const TOLERANCE_TXT: &str = "tolerance_table.txt";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, Serialize)]
pub struct GenSubject {
    pub subject_id: String,
    pub ppg_path: PathBuf,
    pub ecg_path: PathBuf,
    pub ppg_samples: usize,
    pub ecg_samples: usize,
    pub bursts: usize,
    pub lag_s: i64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenSummary {
    pub out_dir: PathBuf,
    pub subjects: Vec<GenSubject>,
}

pub fn gen_data(cfg: &RunConfig, out_dir: &Path, out: &mut dyn Write) -> Result<GenSummary> {
    let subjects = synth::generate(&cfg.synth)?;
    synth::write_subjects(&subjects, out_dir).with_context(|| format!("writing into {}", out_dir.display()))?;
    let summary = GenSummary {
        out_dir: out_dir.to_path_buf(),
        subjects: subjects
            .iter()
            .map(|s| GenSubject {
                subject_id: s.subject_id.clone(),
                ppg_path: synth::series_path(out_dir, &s.subject_id, PPG_SENSOR),
                ecg_path: synth::series_path(out_dir, &s.subject_id, ECG_SENSOR),
                ppg_samples: s.ppg.len(),
                ecg_samples: s.ecg.len(),
                bursts: s.bursts.len(),
                lag_s: s.lag_s,
            })
            .collect(),
    };
    for s in &summary.subjects {
        writeln!(
            out,
            "{}  {} ({} samples)  {} ({} samples)  bursts={} lag={}s",
            s.subject_id,
            s.ppg_path.display(),
            s.ppg_samples,
            s.ecg_path.display(),
            s.ecg_samples,
            s.bursts,
            s.lag_s
        )?;
    }
    writeln!(
        out,
        "truth: {} and {}",
        out_dir.join(synth::BURSTS_FILE).display(),
        out_dir.join(synth::LAGS_FILE).display()
    )?;
    Ok(summary)
}

/// Subject ids with a `<id>_ppg.csv` file in `dir`, sorted.
fn discover_subjects(dir: &Path) -> Result<Vec<String>> {
    let suffix = format!("_{PPG_SENSOR}.csv");
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(&suffix)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        bail!("no *{suffix} files in {}", dir.display());
    }
    Ok(ids)
}

#[derive(Debug, Clone, Serialize)]
pub struct PreparedSubject {
    pub subject_id: String,
    pub split: Split,
    pub applied_lag_s: i64,
    pub synced_samples: usize,
    pub windows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareSummary {
    pub dataset: PathBuf,
    pub train_windows: usize,
    pub test_windows: usize,
    pub subjects: Vec<PreparedSubject>,
    /// `(file or subject, error)` for inputs dropped under `--skip-errors`.
    pub skipped: Vec<(String, String)>,
}

fn sync_subject(cfg: &RunConfig, dir: &Path, id: &str) -> Result<SyncedSeries> {
    let ppg_path = synth::series_path(dir, id, PPG_SENSOR);
    let ecg_path = synth::series_path(dir, id, ECG_SENSOR);
    let ppg = parse_series(&ppg_path, PPG_SENSOR, id).with_context(|| format!("{}", ppg_path.display()))?;
    let ecg = parse_series(&ecg_path, ECG_SENSOR, id).with_context(|| format!("{}", ecg_path.display()))?;
    synchronize(&ppg, &ecg, &cfg.ingest).with_context(|| format!("synchronizing {id}"))
}

pub fn prepare(
    cfg: &RunConfig,
    raw_dir: &Path,
    dataset_out: &Path,
    policy: ErrorPolicy,
    out: &mut dyn Write,
) -> Result<PrepareSummary> {
    let mut synced = Vec::new();
    let mut skipped = Vec::new();
    for id in discover_subjects(raw_dir)? {
        match sync_subject(cfg, raw_dir, &id) {
            Ok(s) => synced.push(s),
            Err(e) if policy == ErrorPolicy::Skip => {
                eprintln!("skipping {id}: {e:#}");
                skipped.push((id, format!("{e:#}")));
            }
            Err(e) => return Err(e),
        }
    }
    let dataset = split_by_subject(&synced, cfg.train_fraction, &cfg.window)?;
    if let Some(parent) = dataset_out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_dataset(&dataset, dataset_out).with_context(|| format!("writing {}", dataset_out.display()))?;

    let per_subject = dataset.windows_per_subject();
    let subjects: Vec<PreparedSubject> = synced
        .iter()
        .map(|s| PreparedSubject {
            subject_id: s.subject_id.clone(),
            split: dataset.split_manifest[&s.subject_id],
            applied_lag_s: s.applied_lag_s,
            synced_samples: s.len(),
            windows: per_subject.get(s.subject_id.as_str()).copied().unwrap_or(0),
        })
        .collect();
    let summary = PrepareSummary {
        dataset: dataset_out.to_path_buf(),
        train_windows: dataset.count(Split::Train),
        test_windows: dataset.count(Split::Test),
        subjects,
        skipped,
    };
    for s in &summary.subjects {
        writeln!(
            out,
            "{:<14} {:<5} lag={:>4}s samples={:>6} windows={:>6}",
            s.subject_id,
            s.split.to_string(),
            s.applied_lag_s,
            s.synced_samples,
            s.windows
        )?;
    }
    writeln!(
        out,
        "train: {} subjects, {} windows; test: {} subjects, {} windows -> {}",
        dataset.subjects(Split::Train).len(),
        summary.train_windows,
        dataset.subjects(Split::Test).len(),
        summary.test_windows,
        dataset_out.display()
    )?;
    if !summary.skipped.is_empty() {
        writeln!(out, "skipped {} subject(s)", summary.skipped.len())?;
    }
    Ok(summary)
}

fn load_dataset(cfg: &RunConfig, path: &Path) -> Result<Dataset> {
    let dataset = read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
    if dataset.k != cfg.estimator.k {
        bail!(
            "dataset {} has k={} but window.k is {}",
            path.display(),
            dataset.k,
            cfg.estimator.k
        );
    }
    Ok(dataset)
}

/// Default training log location next to a model file.
pub fn log_path(model_path: &Path) -> PathBuf {
    let mut p = model_path.as_os_str().to_owned();
    p.push(".log.csv");
    PathBuf::from(p)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub log: PathBuf,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
    pub fit_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
}

pub fn train(
    cfg: &RunConfig,
    dataset_path: &Path,
    model_out: &Path,
    log_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<TrainSummary> {
    let dataset = load_dataset(cfg, dataset_path)?;
    let mut progress = Ok(());
    let (model, log) = estimator::train_with_observer(&dataset, &cfg.estimator, &mut |r| {
        if progress.is_ok() {
            progress = writeln!(
                out,
                "epoch {:>3}  train {:.4}  val {:.4}",
                r.epoch, r.train_loss, r.val_loss
            );
        }
    })?;
    progress?;
    save_model(&model, model_out).with_context(|| format!("writing {}", model_out.display()))?;
    let log_file = log_out.map_or_else(|| log_path(model_out), Path::to_path_buf);
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    fs::write(&log_file, buf)?;
    let summary = TrainSummary {
        model: model_out.to_path_buf(),
        log: log_file,
        epochs_run: model.meta.epochs_run,
        best_epoch: log.best_epoch,
        best_validation_loss: model.meta.best_validation_loss,
        stopped_early: log.stopped_early,
        fit_subjects: log.fit_subjects,
        validation_subjects: log.validation_subjects,
    };
    writeln!(
        out,
        "trained {} epochs ({}), best epoch {} with validation loss {:.4} bpm -> {}",
        summary.epochs_run,
        if summary.stopped_early {
            "early stop"
        } else {
            "epoch limit"
        },
        summary.best_epoch,
        summary.best_validation_loss,
        model_out.display()
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct GridCellSummary {
    pub index: usize,
    pub overrides: BTreeMap<String, String>,
    pub parameter_count: usize,
    pub validation_loss: Option<f64>,
    pub epochs_run: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub model: PathBuf,
    pub best_index: usize,
    pub cells: Vec<GridCellSummary>,
}

pub fn grid_search(cfg: &RunConfig, dataset_path: &Path, model_out: &Path, out: &mut dyn Write) -> Result<GridSummary> {
    if cfg.grid.params.is_empty() {
        bail!("no grid given: add grid.<estimator key> = v1;v2 lines or --grid flags");
    }
    let dataset = load_dataset(cfg, dataset_path)?;
    let opts = GridOptions {
        max_cells: cfg.grid.max_cells,
        max_epochs: cfg.grid.max_epochs,
    };
    let result = estimator::grid_search(&dataset, &cfg.estimator, &cfg.grid.params, &opts)?;
    save_model(&result.best_model, model_out).with_context(|| format!("writing {}", model_out.display()))?;
    let cells: Vec<GridCellSummary> = result
        .cells
        .iter()
        .map(|c| GridCellSummary {
            index: c.index,
            overrides: c.overrides.iter().cloned().collect(),
            parameter_count: c.parameter_count,
            validation_loss: c.outcome.as_ref().ok().map(|o| o.0),
            epochs_run: c.outcome.as_ref().ok().map(|o| o.1),
            error: c.outcome.as_ref().err().cloned(),
        })
        .collect();
    for c in &cells {
        let settings = c
            .overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        let outcome = match (&c.validation_loss, &c.error) {
            (Some(l), _) => format!("val {l:.4} after {} epochs", c.epochs_run.unwrap_or(0)),
            (None, Some(e)) => format!("failed: {e}"),
            (None, None) => "failed".to_string(),
        };
        let mark = if c.index == result.best_index { '*' } else { ' ' };
        writeln!(
            out,
            "{mark}{:>3}  {settings:<40} params={:<6} {outcome}",
            c.index, c.parameter_count
        )?;
    }
    writeln!(out, "best cell {} -> {}", result.best_index, model_out.display())?;
    Ok(GridSummary {
        model: model_out.to_path_buf(),
        best_index: result.best_index,
        cells,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// `oracle`, or the model's file name.
    pub predictor: String,
    pub test_subjects: Vec<String>,
    pub test_windows: usize,
    pub threshold_sweep: Vec<SweepRow>,
    pub tolerance_table: ToleranceTable,
}

/// Evaluate on the dataset's test split with a saved model, or with the
/// true labels when `oracle` is set. Report files go to `out_dir`.
pub fn eval(
    cfg: &RunConfig,
    model_path: Option<&Path>,
    dataset_path: &Path,
    out_dir: &Path,
    oracle: bool,
    out: &mut dyn Write,
) -> Result<EvalReport> {
    let dataset = load_dataset(cfg, dataset_path)?;
    let test = dataset.windows_in(Split::Test);
    if test.is_empty() {
        bail!("dataset {} has no test windows", dataset_path.display());
    }
    let (predictor, name): (Box<dyn ErrorPredictor>, String) = if oracle {
        (Box::new(OraclePredictor), "oracle".into())
    } else {
        let path = model_path.ok_or_else(|| anyhow!("eval needs --model unless --oracle is given"))?;
        let model = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
        if model.config.k != dataset.k {
            bail!("model k={} does not match dataset k={}", model.config.k, dataset.k);
        }
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        (Box::new(model), name)
    };
    let pairs = predict_pairs(predictor.as_ref(), &test)?;
    let sweep = threshold_sweep(&pairs, &cfg.eval.taus)?;
    let table = tolerance_table(&pairs, &cfg.eval.gt_thresholds, &cfg.eval.tolerances)?;
    let report = EvalReport {
        predictor: name,
        test_subjects: dataset.subjects(Split::Test).iter().map(|s| s.to_string()).collect(),
        test_windows: test.len(),
        threshold_sweep: sweep,
        tolerance_table: table,
    };

    fs::create_dir_all(out_dir)?;
    let sweep_txt = sweep_text(&report.threshold_sweep, "detection accuracy %");
    let table_txt = tolerance_text(&report.tolerance_table);
    fs::write(out_dir.join(SWEEP_CSV), sweep_csv(&report.threshold_sweep))?;
    fs::write(out_dir.join(SWEEP_TXT), &sweep_txt)?;
    fs::write(out_dir.join(TOLERANCE_CSV), tolerance_csv(&report.tolerance_table))?;
    fs::write(out_dir.join(TOLERANCE_TXT), &table_txt)?;
    fs::write(out_dir.join(REPORT_JSON), serde_json::to_string_pretty(&report)? + "\n")?;

    writeln!(
        out,
        "{} test windows from {} subjects, predictor {}\n",
        report.test_windows,
        report.test_subjects.len(),
        report.predictor
    )?;
    writeln!(out, "{sweep_txt}")?;
    writeln!(out, "{table_txt}")?;
    writeln!(out, "reports written to {}", out_dir.display())?;
    Ok(report)
}

/// Label every sample from `input` (a file, or stdin when `None`) and write
/// one line per reading to `out`. Machine mode starts with a header line.
pub fn stream(
    cfg: &RunConfig,
    model_path: &Path,
    input: Option<&Path>,
    policy: ErrorPolicy,
    mode: SinkMode,
    out: &mut dyn Write,
) -> Result<StreamSummary> {
    let model = load_model(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    if model.config.k != cfg.window.k {
        bail!("model k={} does not match window.k={}", model.config.k, cfg.window.k);
    }
    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(io::BufReader::new(
            fs::File::open(p).with_context(|| format!("opening {}", p.display()))?,
        )),
        None => Box::new(io::stdin().lock()),
    };
    let origin = input.map_or_else(|| PathBuf::from("<stdin>"), Path::to_path_buf);
    stream_from(cfg, Arc::new(model), reader, &origin, policy, mode, out)
}

pub fn stream_from(
    cfg: &RunConfig,
    model: Arc<EstimatorModel>,
    reader: impl io::Read,
    origin: &Path,
    policy: ErrorPolicy,
    mode: SinkMode,
    out: &mut dyn Write,
) -> Result<StreamSummary> {
    let state = StreamState::with_gap_reset(model, cfg.thresholds()?, cfg.gap_reset_s);
    let rows = SeriesRows::new(reader, origin).map(|r| r.map(|(_, s): (usize, HrSample)| s));
    if mode == SinkMode::Machine {
        writeln!(out, "{MACHINE_HEADER}")?;
    }
    let mut sink = LineSink::new(out, mode);
    let summary = run_stream_with(state, rows, &mut sink, policy)?;
    Ok(summary)
}
