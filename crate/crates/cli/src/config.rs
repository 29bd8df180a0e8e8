//! Run configuration: every module's settings in one flat `section.key = value`
//! file, then command-line overrides on top.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hr_sentinel::estimator::EstimatorConfig;
use hr_sentinel::ingest::IngestConfig;
use hr_sentinel::kv;
use hr_sentinel::metrics::{DEFAULT_GT_THRESHOLDS, DEFAULT_TAUS, DEFAULT_TOLERANCES};
use hr_sentinel::stream::DEFAULT_GAP_RESET_S;
use hr_sentinel::synth::SynthConfig;
use hr_sentinel::windowing::WindowConfig;
use hr_sentinel::FilterThresholds;

/// Separator between alternatives in `grid.*` values. Commas are taken by
/// list-valued keys such as `conv_filters`.
pub const GRID_SEPARATOR: char = ';';

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub taus: Vec<f64>,
    pub gt_thresholds: Vec<f64>,
    pub tolerances: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            taus: DEFAULT_TAUS.to_vec(),
            gt_thresholds: DEFAULT_GT_THRESHOLDS.to_vec(),
            tolerances: DEFAULT_TOLERANCES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub max_cells: usize,
    pub max_epochs: Option<usize>,
    /// Estimator key to candidate values.
    pub params: BTreeMap<String, Vec<String>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            max_cells: 64,
            max_epochs: None,
            params: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub ingest: IngestConfig,
    pub window: WindowConfig,
    pub train_fraction: f64,
    pub estimator: EstimatorConfig,
    pub tau_a: f64,
    pub tau_b: f64,
    pub eval: EvalConfig,
    pub grid: GridConfig,
    pub gap_reset_s: i64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let th = FilterThresholds::default();
        Self {
            synth: SynthConfig::default(),
            ingest: IngestConfig::default(),
            window: WindowConfig::default(),
            train_fraction: 0.8,
            estimator: EstimatorConfig::default(),
            tau_a: th.tau_a(),
            tau_b: th.tau_b(),
            eval: EvalConfig::default(),
            grid: GridConfig::default(),
            gap_reset_s: DEFAULT_GAP_RESET_S,
        }
    }
}

fn list(key: &str, value: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = kv::parse_list(key, value)?;
    if v.is_empty() {
        bail!("{key}: list is empty");
    }
    Ok(v)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_text(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Defaults overridden by every line of `text`. Unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in kv::parse(text)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let Some((section, name)) = key.split_once('.') else {
            bail!("config key {key:?} must look like section.key");
        };
        match (section, name) {
            ("synth", "k") | ("estimator", "k") => {
                bail!("{key}: the window length is set once, as window.k")
            }
            ("synth", _) => self.synth.set(name, value)?,
            ("ingest", _) => self.ingest.set(name, value)?,
            ("window", _) => self.window.set(name, value)?,
            ("split", "train_fraction") => self.train_fraction = kv::parse_value(key, value)?,
            ("estimator", _) => self.estimator.set(name, value)?,
            ("filter", "tau_a") => self.tau_a = kv::parse_value(key, value)?,
            ("filter", "tau_b") => self.tau_b = kv::parse_value(key, value)?,
            ("eval", "taus") => self.eval.taus = list(key, value)?,
            ("eval", "gt_thresholds") => self.eval.gt_thresholds = list(key, value)?,
            ("eval", "tolerances") => self.eval.tolerances = list(key, value)?,
            ("grid", "max_cells") => self.grid.max_cells = kv::parse_value(key, value)?,
            ("grid", "max_epochs") => self.grid.max_epochs = Some(kv::parse_value(key, value)?),
            ("grid", param) => {
                // probe the key against a scratch config so typos fail early
                let first = value.split(GRID_SEPARATOR).next().unwrap_or_default();
                if param == "k" {
                    bail!("{key}: the window length cannot be searched");
                }
                EstimatorConfig::default()
                    .set(param, first)
                    .with_context(|| format!("in {key}"))?;
                let values: Vec<String> = value
                    .split(GRID_SEPARATOR)
                    .map(|v| v.trim().to_string())
                    .filter(|v| !v.is_empty())
                    .collect();
                self.grid.params.insert(param.to_string(), values);
            }
            ("stream", "gap_reset_s") => self.gap_reset_s = kv::parse_value(key, value)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Propagate the shared window length and seed, then run every module's
    /// own validation.
    pub fn finish(mut self) -> Result<Self> {
        self.synth.k = self.window.k;
        self.estimator.k = self.window.k;
        self.synth.validate()?;
        self.ingest.validate()?;
        self.window.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("split.train_fraction must be in (0, 1), got {}", self.train_fraction);
        }
        self.estimator.validate()?;
        self.thresholds()?;
        for (name, v) in [
            ("eval.taus", &self.eval.taus),
            ("eval.gt_thresholds", &self.eval.gt_thresholds),
            ("eval.tolerances", &self.eval.tolerances),
        ] {
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                bail!("{name} must hold finite values >= 0");
            }
        }
        if self.grid.max_cells == 0 {
            bail!("grid.max_cells must be >= 1");
        }
        if self.gap_reset_s < 2 {
            bail!("stream.gap_reset_s must be >= 2");
        }
        Ok(self)
    }

    pub fn thresholds(&self) -> Result<FilterThresholds> {
        Ok(FilterThresholds::new(self.tau_a, self.tau_b)?)
    }

    /// Seed used by both the generator and the estimator.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.estimator.seed = seed;
    }
}
