//! Value types shared by the whole pipeline.
//!
//! Heart-rate readings are 1 Hz samples keyed by integer UTC seconds. Missing
//! readings are gaps in the timestamp sequence, never sentinel values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_hr(hr: f64, what: &str) -> Result<()> {
    if hr.is_finite() && hr > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("{what} must be finite and > 0, got {hr}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrSample {
    pub timestamp: i64,
    pub hr_bpm: f64,
}

impl HrSample {
    pub fn new(timestamp: i64, hr_bpm: f64) -> Result<Self> {
        check_hr(hr_bpm, "heart rate")?;
        Ok(Self { timestamp, hr_bpm })
    }
}

/// Readings from one sensor worn by one subject, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct HrSeries {
    pub sensor_id: String,
    pub subject_id: String,
    samples: Vec<HrSample>,
}

impl HrSeries {
    pub fn new(sensor_id: impl Into<String>, subject_id: impl Into<String>, samples: Vec<HrSample>) -> Result<Self> {
        for pair in samples.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::NonMonotonic {
                    previous: pair[0].timestamp,
                    current: pair[1].timestamp,
                });
            }
        }
        for s in &samples {
            check_hr(s.hr_bpm, "heart rate")?;
        }
        Ok(Self {
            sensor_id: sensor_id.into(),
            subject_id: subject_id.into(),
            samples,
        })
    }

    pub fn samples(&self) -> &[HrSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same sensor and subject, different samples (caller keeps them ordered).
    pub(crate) fn with_samples(&self, samples: Vec<HrSample>) -> Self {
        Self {
            sensor_id: self.sensor_id.clone(),
            subject_id: self.subject_id.clone(),
            samples,
        }
    }

    /// Shift every timestamp by `offset_s` seconds.
    pub fn shifted(&self, offset_s: i64) -> Self {
        self.with_samples(
            self.samples
                .iter()
                .map(|s| HrSample {
                    timestamp: s.timestamp + offset_s,
                    hr_bpm: s.hr_bpm,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncedSample {
    pub timestamp: i64,
    pub hr_ppg: f64,
    pub hr_ecg: f64,
    pub diff_true: f64,
}

/// Pair a device reading with its reference; `diff_true = |hr_ppg - hr_ecg|`.
pub fn make_synced_sample(timestamp: i64, hr_ppg: f64, hr_ecg: f64) -> Result<SyncedSample> {
    check_hr(hr_ppg, "PPG heart rate")?;
    check_hr(hr_ecg, "ECG heart rate")?;
    Ok(SyncedSample {
        timestamp,
        hr_ppg,
        hr_ecg,
        diff_true: (hr_ppg - hr_ecg).abs(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncedSeries {
    pub subject_id: String,
    pub applied_lag_s: i64,
    pub samples: Vec<SyncedSample>,
}

impl SyncedSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Lengths of the maximal runs of consecutive 1 s samples.
    pub fn run_lengths(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = 0usize;
        let mut last: Option<i64> = None;
        for s in &self.samples {
            match last {
                Some(prev) if s.timestamp == prev + 1 => current += 1,
                _ => {
                    if current > 0 {
                        runs.push(current);
                    }
                    current = 1;
                }
            }
            last = Some(s.timestamp);
        }
        if current > 0 {
            runs.push(current);
        }
        runs
    }
}

/// The last `k` device readings ending at `end_timestamp`, labelled with the
/// true error at that instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub end_timestamp: i64,
    pub ppg_values: Vec<f64>,
    pub label_diff_true: f64,
    pub subject_id: String,
}

impl Window {
    /// Build a window from `k` consecutive synced samples. Fails if the slice
    /// has the wrong length or contains a gap.
    pub fn from_samples(samples: &[SyncedSample], k: usize, subject_id: &str) -> Result<Self> {
        if samples.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: samples.len(),
            });
        }
        if let Some(pair) = samples.windows(2).find(|p| p[1].timestamp != p[0].timestamp + 1) {
            return Err(Error::InvalidValue(format!(
                "window spans a gap between {} and {}",
                pair[0].timestamp, pair[1].timestamp
            )));
        }
        let last = samples[k - 1];
        Ok(Self {
            end_timestamp: last.timestamp,
            ppg_values: samples.iter().map(|s| s.hr_ppg).collect(),
            label_diff_true: last.diff_true,
            subject_id: subject_id.to_string(),
        })
    }

    pub fn k(&self) -> usize {
        self.ppg_values.len()
    }
}

/// Traffic-light accuracy state. Ordered by severity; `WarmingUp` sorts first
/// and only appears while a stream has fewer than `k` buffered readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyLabel {
    WarmingUp,
    Acceptable,
    Marginal,
    Unacceptable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayColor {
    Gray,
    Green,
    Yellow,
    Orange,
}

impl DisplayColor {
    pub fn as_str(self) -> &'static str {
        match self {
            DisplayColor::Gray => "gray",
            DisplayColor::Green => "green",
            DisplayColor::Yellow => "yellow",
            DisplayColor::Orange => "orange",
        }
    }
}

impl AccuracyLabel {
    pub const ALL: [AccuracyLabel; 4] = [
        AccuracyLabel::WarmingUp,
        AccuracyLabel::Acceptable,
        AccuracyLabel::Marginal,
        AccuracyLabel::Unacceptable,
    ];

    pub fn display_color(self) -> DisplayColor {
        match self {
            AccuracyLabel::Acceptable => DisplayColor::Green,
            AccuracyLabel::Marginal => DisplayColor::Yellow,
            AccuracyLabel::Unacceptable => DisplayColor::Orange,
            AccuracyLabel::WarmingUp => DisplayColor::Gray,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AccuracyLabel::Acceptable => "acceptable",
            AccuracyLabel::Marginal => "marginal",
            AccuracyLabel::Unacceptable => "unacceptable",
            AccuracyLabel::WarmingUp => "warming_up",
        }
    }
}

impl fmt::Display for AccuracyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AccuracyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AccuracyLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidValue(format!("unknown accuracy label {s:?}")))
    }
}

/// Error cut-offs in bpm separating the three accuracy tiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    tau_a: f64,
    tau_b: f64,
}

impl FilterThresholds {
    pub fn new(tau_a: f64, tau_b: f64) -> Result<Self> {
        if !(tau_a.is_finite() && tau_b.is_finite() && 0.0 < tau_a && tau_a < tau_b) {
            return Err(Error::InvalidValue(format!(
                "thresholds must satisfy 0 < tau_a < tau_b, got tau_a={tau_a}, tau_b={tau_b}"
            )));
        }
        Ok(Self { tau_a, tau_b })
    }

    pub fn tau_a(&self) -> f64 {
        self.tau_a
    }

    pub fn tau_b(&self) -> f64 {
        self.tau_b
    }
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            tau_a: 20.0,
            tau_b: 34.0,
        }
    }
}
