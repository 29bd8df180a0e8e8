//! Browser-independent state behind the demo page.

use std::sync::Arc;

use hr_sentinel::estimator::{train_on, EstimatorConfig, EstimatorModel};
use hr_sentinel::ingest::{synchronize, IngestConfig};
use hr_sentinel::metrics::{predict_pairs, threshold_sweep, SweepRow};
use hr_sentinel::stream::StreamState;
use hr_sentinel::synth::{generate, generate_subject, SynthConfig};
use hr_sentinel::windowing::{make_windows, WindowConfig};
use hr_sentinel::{AccuracyLabel, Error, FilterThresholds, HrSample, Result, SyncedSeries, Window};
use serde::Serialize;

/// Training pool. Small enough to train in a page in a few seconds; bursts
/// are denser than in the displayed recording so there is enough to learn from.
const TRAIN_SUBJECTS: usize = 8;
const VAL_SUBJECTS: usize = 2;
const TRAIN_DURATION_S: usize = 1800;
const TRAIN_ARTIFACTS_PER_HOUR: f64 = 30.0;

#[derive(Debug, Clone, Serialize)]
pub struct Recording {
    pub timestamps: Vec<i64>,
    pub hr_ppg: Vec<f64>,
    pub hr_ecg: Vec<f64>,
    pub diff_true: Vec<f64>,
    pub lag_s: i64,
    pub bursts: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub windows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Labelling {
    pub diff_pred: Vec<Option<f64>>,
    pub labels: Vec<AccuracyLabel>,
    pub acceptable: usize,
    pub marginal: usize,
    pub unacceptable: usize,
}

pub struct Demo {
    seed: u64,
    recording: Option<SyncedSeries>,
    model: Option<Arc<EstimatorModel>>,
}

fn synth_config(seed: u64, n_subjects: usize, duration_s: usize, artifact_rate_per_hour: f64) -> SynthConfig {
    SynthConfig {
        n_subjects,
        duration_s,
        seed,
        artifact_rate_per_hour,
        ..SynthConfig::default()
    }
}

fn missing(what: &str) -> Error {
    Error::InvalidValue(format!("{what} first"))
}

impl Demo {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            recording: None,
            model: None,
        }
    }

    pub fn has_model(&self) -> bool {
        self.model.is_some()
    }

    /// Generate and align one subject to display.
    pub fn generate(&mut self, duration_s: usize, artifact_rate_per_hour: f64) -> Result<Recording> {
        // offset keeps the shown subject out of the training pool
        let cfg = synth_config(self.seed.wrapping_add(1000), 1, duration_s, artifact_rate_per_hour);
        let subject = generate_subject(&cfg, 0)?;
        let synced = synchronize(&subject.ppg, &subject.ecg, &IngestConfig::default())?;
        let rec = Recording {
            timestamps: synced.samples.iter().map(|s| s.timestamp).collect(),
            hr_ppg: synced.samples.iter().map(|s| s.hr_ppg).collect(),
            hr_ecg: synced.samples.iter().map(|s| s.hr_ecg).collect(),
            diff_true: synced.samples.iter().map(|s| s.diff_true).collect(),
            lag_s: synced.applied_lag_s,
            bursts: subject.bursts.len(),
        };
        self.recording = Some(synced);
        Ok(rec)
    }

    /// Train a fresh estimator on a small synthetic pool. The last subjects
    /// are held out for early stopping.
    pub fn train(&mut self, max_epochs: usize) -> Result<TrainReport> {
        let synth = synth_config(self.seed, TRAIN_SUBJECTS, TRAIN_DURATION_S, TRAIN_ARTIFACTS_PER_HOUR);
        let ingest = IngestConfig::default();
        let window = WindowConfig::default();
        let mut per_subject: Vec<Vec<Window>> = Vec::new();
        for s in generate(&synth)? {
            per_subject.push(make_windows(&synchronize(&s.ppg, &s.ecg, &ingest)?, &window));
        }
        let (fit, val) = per_subject.split_at(TRAIN_SUBJECTS - VAL_SUBJECTS);
        let fit: Vec<&Window> = fit.iter().flatten().collect();
        let val: Vec<&Window> = val.iter().flatten().collect();
        // few windows, so smaller batches and a larger step
        let cfg = EstimatorConfig {
            max_epochs,
            batch_size: 64,
            learning_rate: 0.003,
            early_stop_patience: 20,
            seed: self.seed,
            ..EstimatorConfig::default()
        };
        let (model, log) = train_on(&fit, &val, &cfg)?;
        self.model = Some(Arc::new(model));
        Ok(TrainReport {
            train_loss: log.epochs.iter().map(|e| e.train_loss).collect(),
            val_loss: log.epochs.iter().map(|e| e.val_loss).collect(),
            best_epoch: log.best_epoch,
            windows: fit.len(),
        })
    }

    /// Replay the recording's device readings through the streaming filter.
    pub fn label(&self, tau_a: f64, tau_b: f64) -> Result<Labelling> {
        let rec = self.recording.as_ref().ok_or_else(|| missing("generate a recording"))?;
        let model = self.model.clone().ok_or_else(|| missing("train a model"))?;
        let mut state = StreamState::new(model, FilterThresholds::new(tau_a, tau_b)?);
        let mut out = Labelling {
            diff_pred: Vec::with_capacity(rec.len()),
            labels: Vec::with_capacity(rec.len()),
            acceptable: 0,
            marginal: 0,
            unacceptable: 0,
        };
        for s in &rec.samples {
            let r = state.push_sample(HrSample::new(s.timestamp, s.hr_ppg)?)?;
            match r.label {
                AccuracyLabel::Acceptable => out.acceptable += 1,
                AccuracyLabel::Marginal => out.marginal += 1,
                AccuracyLabel::Unacceptable => out.unacceptable += 1,
                AccuracyLabel::WarmingUp => {}
            }
            out.diff_pred.push(r.diff_pred);
            out.labels.push(r.label);
        }
        Ok(out)
    }

    /// Detection accuracy of the trained model on the recording's windows.
    pub fn sweep(&self, taus: &[f64]) -> Result<Vec<SweepRow>> {
        let rec = self.recording.as_ref().ok_or_else(|| missing("generate a recording"))?;
        let model = self.model.as_ref().ok_or_else(|| missing("train a model"))?;
        let windows = make_windows(rec, &WindowConfig::default());
        let refs: Vec<&Window> = windows.iter().collect();
        threshold_sweep(&predict_pairs(model.as_ref(), &refs)?, taus)
    }
}
