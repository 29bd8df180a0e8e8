use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::config(format!("unknown activation {s:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

impl FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Padding::Valid),
            "same" => Ok(Padding::Same),
            _ => Err(Error::config(format!("unknown padding {s:?}"))),
        }
    }
}

impl fmt::Display for Padding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
        })
    }
}

pub const CONV_LAYERS: usize = 4;
pub const DENSE_LAYERS: usize = 2;

/// Architecture and training hyperparameters of the error estimator.
///
/// Defaults: four convolutions with 8/8/16/16 filters and kernel 3 over a
/// 10-sample window, global average pooling, dense 16 then a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub k: usize,
    pub conv_filters: Vec<usize>,
    pub kernel_size: usize,
    pub dense_units: Vec<usize>,
    /// Applied after every convolution and the first dense layer; the output
    /// layer is always linear.
    pub activation: Activation,
    pub padding: Padding,
    /// Raw bpm values are divided by this before entering the network.
    pub input_scale: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    /// Validation loss must drop by more than this (bpm) to count as progress.
    pub min_improvement: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            k: 10,
            conv_filters: vec![8, 8, 16, 16],
            kernel_size: 3,
            dense_units: vec![16, 1],
            activation: Activation::Relu,
            padding: Padding::Valid,
            input_scale: 200.0,
            learning_rate: 0.001,
            max_epochs: 200,
            batch_size: 256,
            early_stop_patience: 10,
            min_improvement: 1e-4,
            validation_fraction: 0.15,
            seed: 42,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

/// Keys accepted by [`EstimatorConfig::set`], in canonical order.
pub const KEYS: &[&str] = &[
    "k",
    "conv_filters",
    "kernel_size",
    "dense_units",
    "activation",
    "padding",
    "input_scale",
    "learning_rate",
    "max_epochs",
    "batch_size",
    "early_stop_patience",
    "min_improvement",
    "validation_fraction",
    "seed",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
];

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_filters.len() != CONV_LAYERS {
            return Err(Error::config(format!(
                "estimator.conv_filters needs {CONV_LAYERS} entries, got {}",
                self.conv_filters.len()
            )));
        }
        if self.dense_units.len() != DENSE_LAYERS {
            return Err(Error::config(format!(
                "estimator.dense_units needs {DENSE_LAYERS} entries, got {}",
                self.dense_units.len()
            )));
        }
        if self.dense_units[1] != 1 {
            return Err(Error::config(
                "estimator.dense_units must end with a single output unit",
            ));
        }
        if self.k == 0 || self.kernel_size == 0 {
            return Err(Error::config("estimator.k and estimator.kernel_size must be >= 1"));
        }
        if self.conv_filters.iter().chain(&self.dense_units).any(|&n| n == 0) {
            return Err(Error::config("all layer sizes must be >= 1"));
        }
        if self.padding == Padding::Valid {
            let shrink = CONV_LAYERS * (self.kernel_size - 1);
            if self.k < shrink + 1 {
                return Err(Error::config(format!(
                    "k={} too short for {CONV_LAYERS} valid convolutions of kernel {} (needs k >= {})",
                    self.k,
                    self.kernel_size,
                    shrink + 1
                )));
            }
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.input_scale) {
            return Err(Error::config("estimator.input_scale must be > 0"));
        }
        if !positive(self.learning_rate) {
            return Err(Error::config("estimator.learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("estimator.batch_size must be >= 1"));
        }
        if !(self.min_improvement.is_finite() && self.min_improvement >= 0.0) {
            return Err(Error::config("estimator.min_improvement must be >= 0"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("estimator.validation_fraction must be in (0, 1)"));
        }
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) || !positive(self.adam_epsilon) {
            return Err(Error::config("adam betas must be in [0, 1) and epsilon > 0"));
        }
        Ok(())
    }

    /// Temporal length after each convolution, starting with the input.
    pub fn temporal_lengths(&self) -> [usize; CONV_LAYERS + 1] {
        let mut out = [self.k; CONV_LAYERS + 1];
        for i in 1..=CONV_LAYERS {
            out[i] = match self.padding {
                Padding::Valid => out[i - 1] + 1 - self.kernel_size,
                Padding::Same => out[i - 1],
            };
        }
        out
    }

    /// Channel counts per stage, starting with the single input channel.
    pub fn channels(&self) -> [usize; CONV_LAYERS + 1] {
        let mut out = [1; CONV_LAYERS + 1];
        out[1..].copy_from_slice(&self.conv_filters);
        out
    }

    /// `(name, shape)` of every trainable tensor in declaration order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let ch = self.channels();
        let mut out = Vec::new();
        for l in 0..CONV_LAYERS {
            out.push((
                format!("conv{}.weight", l + 1),
                vec![self.kernel_size, ch[l], ch[l + 1]],
            ));
            out.push((format!("conv{}.bias", l + 1), vec![ch[l + 1]]));
        }
        let mut fan_in = ch[CONV_LAYERS];
        for (l, &units) in self.dense_units.iter().enumerate() {
            out.push((format!("dense{}.weight", l + 1), vec![fan_in, units]));
            out.push((format!("dense{}.bias", l + 1), vec![units]));
            fan_in = units;
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k" => self.k = kv::parse_value(key, value)?,
            "conv_filters" => self.conv_filters = kv::parse_list(key, value)?,
            "kernel_size" => self.kernel_size = kv::parse_value(key, value)?,
            "dense_units" => self.dense_units = kv::parse_list(key, value)?,
            "activation" => self.activation = value.trim().parse()?,
            "padding" => self.padding = value.trim().parse()?,
            "input_scale" => self.input_scale = kv::parse_value(key, value)?,
            "learning_rate" => self.learning_rate = kv::parse_value(key, value)?,
            "max_epochs" => self.max_epochs = kv::parse_value(key, value)?,
            "batch_size" => self.batch_size = kv::parse_value(key, value)?,
            "early_stop_patience" => self.early_stop_patience = kv::parse_value(key, value)?,
            "min_improvement" => self.min_improvement = kv::parse_value(key, value)?,
            "validation_fraction" => self.validation_fraction = kv::parse_value(key, value)?,
            "seed" => self.seed = kv::parse_value(key, value)?,
            "adam_beta1" => self.adam_beta1 = kv::parse_value(key, value)?,
            "adam_beta2" => self.adam_beta2 = kv::parse_value(key, value)?,
            "adam_epsilon" => self.adam_epsilon = kv::parse_value(key, value)?,
            _ => return Err(Error::config(format!("unknown estimator key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical `(key, value)` pairs; floats use shortest round-trip text.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("k", self.k.to_string()),
            ("conv_filters", kv::render_list(&self.conv_filters)),
            ("kernel_size", self.kernel_size.to_string()),
            ("dense_units", kv::render_list(&self.dense_units)),
            ("activation", self.activation.to_string()),
            ("padding", self.padding.to_string()),
            ("input_scale", self.input_scale.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("early_stop_patience", self.early_stop_patience.to_string()),
            ("min_improvement", self.min_improvement.to_string()),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("seed", self.seed.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_epsilon", self.adam_epsilon.to_string()),
        ]
    }
}
