//! Real-time accuracy warnings for PPG-derived heart rate.
//!
//! A small 1-D CNN estimates the current measurement error from the last `k`
//! heart-rate readings alone, and a two-threshold filter turns that estimate
//! into a traffic-light label:
//!
//! * [`ingest`] reads per-sensor CSV files, aligns device and reference clocks
//!   and pairs readings.
//! * [`windowing`] cuts labelled rolling windows and splits subjects.
//! * [`estimator`] holds the network, its training loop and checkpoints.
//! * [`filter`] maps predicted errors to [`AccuracyLabel`]s.
//! * [`metrics`] evaluates detection accuracy over threshold sweeps.
//! * [`stream`] runs the estimator and filter per incoming sample.
//! * [`synth`] generates paired synthetic recordings for desk-scale runs.

pub mod domain;
pub mod error;
pub mod estimator;
pub mod filter;
pub mod ingest;
pub mod kv;
pub mod metrics;
pub mod stream;
pub mod synth;
pub mod windowing;

pub use domain::{
    make_synced_sample, AccuracyLabel, DisplayColor, FilterThresholds, HrSample, HrSeries, SyncedSample, SyncedSeries,
    Window,
};
pub use error::{Error, Result};
