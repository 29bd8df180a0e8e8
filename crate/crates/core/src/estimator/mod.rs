//! The measurement error estimator: a four-layer 1-D CNN with global average
//! pooling and two dense layers that regresses the absolute HR error (bpm)
//! from the last `k` device readings.

mod adam;
mod checkpoint;
mod config;
mod grid;
pub mod network;
mod params;
mod train;

pub use adam::AdamState;
pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use config::{Activation, EstimatorConfig, Padding, CONV_LAYERS, DENSE_LAYERS, KEYS};
pub use grid::{grid_search, GridCell, GridOptions, GridResult};
pub use params::{Params, Tensor};
pub use train::{train, train_on, train_with_observer, EpochRecord, TrainingLog};

use crate::domain::Window;
use crate::error::{Error, Result};
use network::{Geometry, Trace};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_validation_loss: f64,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        Self {
            epochs_run: 0,
            best_validation_loss: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorModel {
    pub config: EstimatorConfig,
    pub params: Params<f32>,
    pub meta: TrainingMeta,
}

/// Fresh, untrained model. Equal configs (including the seed) give
/// bit-identical weights.
pub fn init_model(cfg: &EstimatorConfig) -> Result<EstimatorModel> {
    cfg.validate()?;
    Ok(EstimatorModel {
        config: cfg.clone(),
        params: Params::init(cfg),
        meta: TrainingMeta::default(),
    })
}

/// Absolute error between the true and predicted measurement error.
pub fn loss(diff_true: f64, diff_pred: f64) -> f64 {
    (diff_true - diff_pred).abs()
}

pub fn batch_loss(pairs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let (sum, n) = pairs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), (t, p)| (s + loss(t, p), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EstimatorModel {
    pub fn geometry(&self) -> Geometry {
        Geometry::new(&self.config)
    }

    /// Raw network output for a window of `k` bpm values, before clamping.
    pub fn forward_raw(&self, window: &[f64]) -> Result<f32> {
        let mut scratch = Scratch::new(self);
        scratch.forward_raw(self, window)
    }

    /// Predicted measurement error in bpm, clamped at zero.
    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        Ok((self.forward_raw(window)? as f64).max(0.0))
    }

    /// Predictions for many windows, reusing one scratch buffer.
    pub fn predict_many<'a>(&self, windows: impl IntoIterator<Item = &'a Window>) -> Result<Vec<f64>> {
        let mut scratch = Scratch::new(self);
        windows
            .into_iter()
            .map(|w| Ok((scratch.forward_raw(self, &w.ppg_values)? as f64).max(0.0)))
            .collect()
    }
}

/// Reusable forward buffers for repeated inference with one model.
#[derive(Debug, Clone)]
pub struct Scratch {
    geometry: Geometry,
    trace: Trace<f32>,
    input: Vec<f32>,
}

impl Scratch {
    pub fn new(model: &EstimatorModel) -> Self {
        let geometry = model.geometry();
        Self {
            trace: Trace::new(&geometry),
            input: vec![0.0; model.config.k],
            geometry,
        }
    }

    pub fn forward_raw(&mut self, model: &EstimatorModel, window: &[f64]) -> Result<f32> {
        if window.len() != model.config.k {
            return Err(Error::LengthMismatch {
                expected: model.config.k,
                actual: window.len(),
            });
        }
        network::scale_input(window, model.config.input_scale, &mut self.input);
        Ok(network::forward(
            &self.geometry,
            &model.params,
            &self.input,
            &mut self.trace,
        ))
    }
}

/// Anything that can produce a predicted error for a labelled window.
pub trait ErrorPredictor {
    fn predict_window(&self, window: &Window) -> Result<f64>;

    fn predict_all(&self, windows: &[&Window]) -> Result<Vec<f64>> {
        windows.iter().map(|w| self.predict_window(w)).collect()
    }
}

impl ErrorPredictor for EstimatorModel {
    fn predict_window(&self, window: &Window) -> Result<f64> {
        self.predict(&window.ppg_values)
    }

    fn predict_all(&self, windows: &[&Window]) -> Result<Vec<f64>> {
        self.predict_many(windows.iter().copied())
    }
}

/// Debug predictor that returns the true label; exercises the evaluation
/// harness independently of model quality.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl ErrorPredictor for OraclePredictor {
    fn predict_window(&self, window: &Window) -> Result<f64> {
        Ok(window.label_diff_true)
    }
}
