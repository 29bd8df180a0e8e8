//! Per-sample inference: keep the last `k` consecutive readings, predict the
//! error once the buffer is full and label every reading.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::domain::{AccuracyLabel, DisplayColor, FilterThresholds, HrSample};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorModel, Scratch};
use crate::filter::classify;

pub const DEFAULT_GAP_RESET_S: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabeledReading {
    pub timestamp: i64,
    pub hr_bpm: f64,
    /// Absent exactly while warming up.
    pub diff_pred: Option<f64>,
    pub label: AccuracyLabel,
    pub latency_us: u64,
}

pub struct StreamState {
    model: Arc<EstimatorModel>,
    thresholds: FilterThresholds,
    gap_reset_s: i64,
    buffer: VecDeque<HrSample>,
    last_timestamp: Option<i64>,
    scratch: Scratch,
    values: Vec<f64>,
}

impl StreamState {
    pub fn new(model: Arc<EstimatorModel>, thresholds: FilterThresholds) -> Self {
        Self::with_gap_reset(model, thresholds, DEFAULT_GAP_RESET_S)
    }

    /// `gap_reset_s` is the timestamp step (>= 2) that empties the buffer.
    pub fn with_gap_reset(model: Arc<EstimatorModel>, thresholds: FilterThresholds, gap_reset_s: i64) -> Self {
        let k = model.config.k;
        Self {
            scratch: Scratch::new(&model),
            model,
            thresholds,
            gap_reset_s: gap_reset_s.max(2),
            buffer: VecDeque::with_capacity(k),
            last_timestamp: None,
            values: Vec::with_capacity(k),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn last_timestamp(&self) -> Option<i64> {
        self.last_timestamp
    }

    pub fn push_sample(&mut self, sample: HrSample) -> Result<LabeledReading> {
        let started = Clock::now();
        if let Some(prev) = self.last_timestamp {
            if sample.timestamp <= prev {
                return Err(Error::NonMonotonic {
                    previous: prev,
                    current: sample.timestamp,
                });
            }
            if sample.timestamp - prev >= self.gap_reset_s {
                self.buffer.clear();
            }
        }
        HrSample::new(sample.timestamp, sample.hr_bpm)?;
        self.last_timestamp = Some(sample.timestamp);

        let k = self.model.config.k;
        if self.buffer.len() == k {
            self.buffer.pop_front();
        }
        self.buffer.push_back(sample);

        let (diff_pred, label) = if self.buffer.len() == k {
            self.values.clear();
            self.values.extend(self.buffer.iter().map(|s| s.hr_bpm));
            let raw = self.scratch.forward_raw(&self.model, &self.values)?;
            let pred = (raw as f64).max(0.0);
            (Some(pred), classify(pred, &self.thresholds)?)
        } else {
            (None, AccuracyLabel::WarmingUp)
        };
        Ok(LabeledReading {
            timestamp: sample.timestamp,
            hr_bpm: sample.hr_bpm,
            diff_pred,
            label,
            latency_us: started.elapsed_us(),
        })
    }
}

/// Wall-clock timing; unavailable on bare wasm, where latency reads 0.
#[cfg(not(target_arch = "wasm32"))]
struct Clock(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Clock {
    fn now() -> Self {
        Clock(std::time::Instant::now())
    }

    fn elapsed_us(&self) -> u64 {
        self.0.elapsed().as_micros() as u64
    }
}

#[cfg(target_arch = "wasm32")]
struct Clock;

#[cfg(target_arch = "wasm32")]
impl Clock {
    fn now() -> Self {
        Clock
    }

    fn elapsed_us(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorPolicy {
    Strict,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StreamSummary {
    pub counts: BTreeMap<AccuracyLabel, u64>,
    pub skipped: u64,
    pub max_latency_us: u64,
}

impl StreamSummary {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn count(&self, label: AccuracyLabel) -> u64 {
        self.counts.get(&label).copied().unwrap_or(0)
    }
}

pub trait ReadingSink {
    fn emit(&mut self, reading: &LabeledReading) -> Result<()>;
}

impl ReadingSink for Vec<LabeledReading> {
    fn emit(&mut self, reading: &LabeledReading) -> Result<()> {
        self.push(*reading);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkMode {
    /// `timestamp,hr_bpm,diff_pred,label`
    Machine,
    /// Same fields, colored by label when `color` is set.
    Human { color: bool },
}

/// Line-oriented text sink.
pub struct LineSink<W: Write> {
    out: W,
    mode: SinkMode,
}

impl<W: Write> LineSink<W> {
    pub fn new(out: W, mode: SinkMode) -> Self {
        Self { out, mode }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn ansi(color: DisplayColor) -> &'static str {
    match color {
        DisplayColor::Green => "\x1b[32m",
        DisplayColor::Yellow => "\x1b[33m",
        // 256-color orange
        DisplayColor::Orange => "\x1b[38;5;208m",
        DisplayColor::Gray => "\x1b[90m",
    }
}

pub fn format_reading(r: &LabeledReading) -> String {
    let pred = r.diff_pred.map_or(String::new(), |p| format!("{p:.3}"));
    format!("{},{},{},{}", r.timestamp, r.hr_bpm, pred, r.label)
}

impl<W: Write> ReadingSink for LineSink<W> {
    fn emit(&mut self, r: &LabeledReading) -> Result<()> {
        let line = format_reading(r);
        match self.mode {
            SinkMode::Human { color: true } => writeln!(self.out, "{}{line}\x1b[0m", ansi(r.label.display_color()))?,
            _ => writeln!(self.out, "{line}")?,
        }
        Ok(())
    }
}

pub const MACHINE_HEADER: &str = "timestamp,hr_bpm,diff_pred,label";

/// Feed every sample through one stream state. Under `Skip`, rejected
/// samples (non-monotonic timestamps, unreadable rows) are counted and the
/// stream continues; under `Strict` the first error aborts.
pub fn run_stream<I, S>(
    input: I,
    sink: &mut S,
    model: Arc<EstimatorModel>,
    thresholds: FilterThresholds,
    policy: ErrorPolicy,
) -> Result<StreamSummary>
where
    I: IntoIterator<Item = Result<HrSample>>,
    S: ReadingSink + ?Sized,
{
    run_stream_with(StreamState::new(model, thresholds), input, sink, policy)
}

/// [`run_stream`] with a caller-built state, e.g. a non-default gap reset.
pub fn run_stream_with<I, S>(
    mut state: StreamState,
    input: I,
    sink: &mut S,
    policy: ErrorPolicy,
) -> Result<StreamSummary>
where
    I: IntoIterator<Item = Result<HrSample>>,
    S: ReadingSink + ?Sized,
{
    let mut summary = StreamSummary::default();
    for item in input {
        let reading = item.and_then(|s| state.push_sample(s));
        match reading {
            Ok(r) => {
                *summary.counts.entry(r.label).or_default() += 1;
                summary.max_latency_us = summary.max_latency_us.max(r.latency_us);
                sink.emit(&r)?;
            }
            Err(e) if policy == ErrorPolicy::Skip && !matches!(e, Error::Io(_)) => {
                summary.skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(summary)
}

/// Stdout helper: colored output only when writing to a terminal.
pub fn human_mode_for_stdout() -> SinkMode {
    use std::io::IsTerminal;
    SinkMode::Human {
        color: io::stdout().is_terminal(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{init_model, EstimatorConfig};

    fn model() -> Arc<EstimatorModel> {
        Arc::new(init_model(&EstimatorConfig::default()).unwrap())
    }

    fn sample(t: i64) -> HrSample {
        HrSample::new(t, 70.0 + (t % 5) as f64).unwrap()
    }

    #[test]
    fn warm_up_then_classified() {
        let mut st = StreamState::new(model(), FilterThresholds::default());
        for t in 0..9 {
            let r = st.push_sample(sample(t)).unwrap();
            assert_eq!(r.label, AccuracyLabel::WarmingUp);
            assert!(r.diff_pred.is_none());
        }
        let r = st.push_sample(sample(9)).unwrap();
        assert_ne!(r.label, AccuracyLabel::WarmingUp);
        assert!(r.diff_pred.is_some());
        assert_eq!(st.buffered(), 10);
        st.push_sample(sample(10)).unwrap();
        assert_eq!(st.buffered(), 10);
    }

    #[test]
    fn gap_resets_buffer() {
        let mut st = StreamState::new(model(), FilterThresholds::default());
        for t in 0..15 {
            st.push_sample(sample(t)).unwrap();
        }
        let labels: Vec<_> = (20..30).map(|t| st.push_sample(sample(t)).unwrap().label).collect();
        assert!(labels[..9].iter().all(|l| *l == AccuracyLabel::WarmingUp));
        assert_ne!(labels[9], AccuracyLabel::WarmingUp);
    }

    #[test]
    fn non_monotonic_is_rejected() {
        let mut st = StreamState::new(model(), FilterThresholds::default());
        st.push_sample(sample(5)).unwrap();
        assert!(matches!(st.push_sample(sample(5)), Err(Error::NonMonotonic { .. })));
        assert!(st.push_sample(sample(4)).is_err());
        assert!(st.push_sample(sample(6)).is_ok());
    }

    #[test]
    fn run_stream_counts_and_skips() {
        let mut sink: Vec<LabeledReading> = Vec::new();
        let s = run_stream(
            std::iter::empty(),
            &mut sink,
            model(),
            FilterThresholds::default(),
            ErrorPolicy::Strict,
        )
        .unwrap();
        assert_eq!(s.total(), 0);

        let input = || [1, 2, 2, 3].map(|t| Ok(sample(t)));
        let s = run_stream(
            input(),
            &mut sink,
            model(),
            FilterThresholds::default(),
            ErrorPolicy::Skip,
        )
        .unwrap();
        assert_eq!(s.skipped, 1);
        assert_eq!(s.count(AccuracyLabel::WarmingUp), 3);
        let strict = run_stream(
            input(),
            &mut sink,
            model(),
            FilterThresholds::default(),
            ErrorPolicy::Strict,
        );
        assert!(strict.is_err());
    }

    #[test]
    fn machine_and_colored_lines() {
        let r = LabeledReading {
            timestamp: 10,
            hr_bpm: 71.5,
            diff_pred: Some(25.0),
            label: AccuracyLabel::Marginal,
            latency_us: 3,
        };
        let mut sink = LineSink::new(Vec::new(), SinkMode::Machine);
        sink.emit(&r).unwrap();
        let warm = LabeledReading {
            diff_pred: None,
            label: AccuracyLabel::WarmingUp,
            ..r
        };
        sink.emit(&warm).unwrap();
        let text = String::from_utf8(sink.into_inner()).unwrap();
        assert_eq!(text, "10,71.5,25.000,marginal\n10,71.5,,warming_up\n");

        let mut sink = LineSink::new(Vec::new(), SinkMode::Human { color: true });
        sink.emit(&r).unwrap();
        let text = String::from_utf8(sink.into_inner()).unwrap();
        assert!(text.starts_with("\x1b[33m") && text.ends_with("\x1b[0m\n"));
    }
}
