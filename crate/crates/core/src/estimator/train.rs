use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::config::EstimatorConfig;
use super::network::{self, Geometry, Trace};
use super::params::Params;
use super::{EstimatorModel, TrainingMeta};
use crate::domain::Window;
use crate::error::{Error, Result};
use crate::windowing::{train_subject_count, Dataset, Split};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub fit_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
}

impl TrainingLog {
    /// `epoch,train_loss,val_loss` with a header row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_loss")?;
        for r in &self.epochs {
            writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss)?;
        }
        Ok(())
    }
}

pub fn train(dataset: &Dataset, cfg: &EstimatorConfig) -> Result<(EstimatorModel, TrainingLog)> {
    train_with_observer(dataset, cfg, &mut |_| {})
}

/// Train on the dataset's train subjects, holding out the last
/// `ceil(validation_fraction * S)` of them (sorted by id) for early stopping.
pub fn train_with_observer(
    dataset: &Dataset,
    cfg: &EstimatorConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(EstimatorModel, TrainingLog)> {
    cfg.validate()?;
    let subjects = dataset.subjects(Split::Train);
    if subjects.is_empty() {
        return Err(Error::Split("no train subjects".into()));
    }
    let n_val = train_subject_count(subjects.len(), cfg.validation_fraction);
    if n_val == 0 || n_val >= subjects.len() {
        return Err(Error::Split(format!(
            "validation split empty: {} train subjects with validation_fraction {}",
            subjects.len(),
            cfg.validation_fraction
        )));
    }
    let (fit_ids, val_ids) = subjects.split_at(subjects.len() - n_val);
    let fit_set: HashSet<&str> = fit_ids.iter().copied().collect();
    let val_set: HashSet<&str> = val_ids.iter().copied().collect();
    let fit: Vec<&Window> = dataset
        .windows
        .iter()
        .filter(|w| fit_set.contains(w.subject_id.as_str()))
        .collect();
    let val: Vec<&Window> = dataset
        .windows
        .iter()
        .filter(|w| val_set.contains(w.subject_id.as_str()))
        .collect();
    let (model, mut log) = train_on_observed(&fit, &val, cfg, observer)?;
    log.fit_subjects = fit_ids.iter().map(|s| s.to_string()).collect();
    log.validation_subjects = val_ids.iter().map(|s| s.to_string()).collect();
    Ok((model, log))
}

/// Train on explicit fit and validation windows (they may coincide).
pub fn train_on(fit: &[&Window], val: &[&Window], cfg: &EstimatorConfig) -> Result<(EstimatorModel, TrainingLog)> {
    train_on_observed(fit, val, cfg, &mut |_| {})
}

struct Tensorized {
    inputs: Vec<f32>,
    labels: Vec<f32>,
}

fn tensorize(windows: &[&Window], cfg: &EstimatorConfig) -> Result<Tensorized> {
    let k = cfg.k;
    let mut inputs = vec![0f32; windows.len() * k];
    let mut labels = Vec::with_capacity(windows.len());
    for (w, dst) in windows.iter().zip(inputs.chunks_exact_mut(k)) {
        if w.k() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: w.k(),
            });
        }
        network::scale_input(&w.ppg_values, cfg.input_scale, dst);
        labels.push(w.label_diff_true as f32);
    }
    Ok(Tensorized { inputs, labels })
}

fn mean_abs_error(g: &Geometry, p: &Params<f32>, data: &Tensorized, trace: &mut Trace<f32>) -> f64 {
    let k = g.lengths[0];
    let sum: f64 = data
        .inputs
        .chunks_exact(k)
        .zip(&data.labels)
        .map(|(x, &y)| (network::forward(g, p, x, trace) - y).abs() as f64)
        .sum();
    sum / data.labels.len() as f64
}

fn train_on_observed(
    fit: &[&Window],
    val: &[&Window],
    cfg: &EstimatorConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(EstimatorModel, TrainingLog)> {
    cfg.validate()?;
    if fit.is_empty() {
        return Err(Error::Split("no training windows".into()));
    }
    if val.is_empty() {
        return Err(Error::Split("validation split empty".into()));
    }
    let fit_data = tensorize(fit, cfg)?;
    let val_data = tensorize(val, cfg)?;
    let g = Geometry::new(cfg);
    let k = cfg.k;

    let mut params = Params::init(cfg);
    let mut grads = Params::<f32>::zeros(cfg);
    let mut adam = AdamState::new(&params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
    let mut trace = Trace::new(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..fit_data.labels.len()).collect();
    let mut batch_x = Vec::with_capacity(cfg.batch_size * k);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);
    let mut best_params = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0usize;
    let mut log = TrainingLog::default();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&fit_data.inputs[i * k..(i + 1) * k]);
                batch_y.push(fit_data.labels[i]);
            }
            let l = network::batch_gradient(&g, &params, &batch_x, &batch_y, &mut trace, &mut grads);
            weighted += l * chunk.len() as f64;
            adam.step(&mut params, &grads, cfg.learning_rate)?;
        }
        let record = EpochRecord {
            epoch,
            train_loss: weighted / order.len() as f64,
            val_loss: mean_abs_error(&g, &params, &val_data, &mut trace),
        };
        observer(&record);
        log.epochs.push(record);

        if !record.val_loss.is_finite() || !params.all_finite() {
            break;
        }
        if record.val_loss < best_loss - cfg.min_improvement {
            best_loss = record.val_loss;
            best_params.clone_from(&params);
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    let model = EstimatorModel {
        config: cfg.clone(),
        params: best_params,
        meta: TrainingMeta {
            epochs_run: log.epochs.len(),
            best_validation_loss: best_loss,
        },
    };
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn window(values: Vec<f64>, label: f64, subject: &str) -> Window {
        Window {
            end_timestamp: 0,
            ppg_values: values,
            label_diff_true: label,
            subject_id: subject.into(),
        }
    }

    /// Label depends on the last step of the window, which the network can
    /// pick up directly.
    fn learnable(n: usize, seed: u64) -> Vec<Window> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let base: f64 = rng.random_range(55.0..95.0);
                let jump: f64 = if rng.random_bool(0.5) {
                    rng.random_range(10.0..40.0)
                } else {
                    0.0
                };
                let mut v: Vec<f64> = (0..10).map(|_| base + rng.random_range(-1.0..1.0)).collect();
                for x in v.iter_mut().skip(7) {
                    *x += jump;
                }
                window(v, jump, "s")
            })
            .collect()
    }

    #[test]
    fn overfits_small_learnable_set() {
        let ws = learnable(100, 7);
        let refs: Vec<&Window> = ws.iter().collect();
        let cfg = EstimatorConfig {
            max_epochs: 500,
            batch_size: 10,
            early_stop_patience: 500,
            learning_rate: 0.003,
            ..Default::default()
        };
        let (model, log) = train_on(&refs, &refs, &cfg).unwrap();
        let last = log.epochs.last().unwrap();
        assert!(
            log.epochs.iter().any(|r| r.train_loss < 1.0),
            "final train loss {}",
            last.train_loss
        );
        assert!(model.meta.best_validation_loss < 1.0);
    }

    #[test]
    fn constant_label_is_learned() {
        let ws: Vec<Window> = learnable(64, 3)
            .into_iter()
            .map(|mut w| {
                w.label_diff_true = 2.0;
                w
            })
            .collect();
        let refs: Vec<&Window> = ws.iter().collect();
        let cfg = EstimatorConfig {
            max_epochs: 300,
            batch_size: 8,
            early_stop_patience: 300,
            learning_rate: 0.005,
            ..Default::default()
        };
        let (model, _) = train_on(&refs, &refs, &cfg).unwrap();
        for w in &ws {
            let p = model.predict(&w.ppg_values).unwrap();
            assert!((p - 2.0).abs() < 0.25, "prediction {p}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ws = learnable(80, 11);
        let refs: Vec<&Window> = ws.iter().collect();
        let cfg = EstimatorConfig {
            max_epochs: 5,
            batch_size: 16,
            ..Default::default()
        };
        let (m1, l1) = train_on(&refs, &refs[..20], &cfg).unwrap();
        let (m2, l2) = train_on(&refs, &refs[..20], &cfg).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn early_stopping_returns_best_snapshot() {
        let ws = learnable(50, 5);
        let refs: Vec<&Window> = ws.iter().collect();
        let cfg = EstimatorConfig {
            max_epochs: 200,
            batch_size: 50,
            early_stop_patience: 2,
            min_improvement: 1e6,
            ..Default::default()
        };
        let (model, log) = train_on(&refs, &refs, &cfg).unwrap();
        assert!(log.stopped_early);
        assert_eq!(log.epochs.len(), 3);
        assert_eq!(log.best_epoch, 1);
        assert_eq!(model.meta.best_validation_loss, log.epochs[0].val_loss);
    }

    #[test]
    fn empty_validation_is_rejected() {
        let ws = learnable(10, 1);
        let refs: Vec<&Window> = ws.iter().collect();
        assert!(train_on(&refs, &[], &EstimatorConfig::default()).is_err());
    }

    #[test]
    fn dataset_split_needs_two_train_subjects() {
        use std::collections::BTreeMap;
        let ws = learnable(10, 1);
        let mut manifest = BTreeMap::new();
        manifest.insert("s".to_string(), Split::Train);
        manifest.insert("t".to_string(), Split::Test);
        let d = Dataset {
            k: 10,
            windows: ws,
            split_manifest: manifest,
        };
        assert!(matches!(train(&d, &EstimatorConfig::default()), Err(Error::Split(_))));
    }

    #[test]
    fn log_csv_format() {
        let log = TrainingLog {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 2.5,
                val_loss: 3.0,
            }],
            ..Default::default()
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss\n1,2.5,3\n");
    }
}
