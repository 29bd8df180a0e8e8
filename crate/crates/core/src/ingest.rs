//! Reading per-sensor CSV files, lag correction and pairing of device and
//! reference heart rate.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::domain::{make_synced_sample, HrSample, HrSeries, SyncedSample, SyncedSeries};
use crate::error::{Error, Result};
use crate::kv;

pub const SERIES_HEADER: &str = "timestamp_utc,hr_bpm";
pub const SYNCED_HEADER: &str = "timestamp_utc,hr_ppg,hr_ecg,diff_true";

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    /// Integer lags in `[-max_lag_search_s, max_lag_search_s]` are tried.
    pub max_lag_search_s: i64,
    pub hr_min_bpm: f64,
    pub hr_max_bpm: f64,
    /// Largest plausible change of the reference HR per elapsed second.
    pub max_step_bpm_per_s: f64,
    /// Minimum number of overlapping samples for a lag to be considered.
    pub min_overlap: usize,
    /// Fraction of the largest squared residuals ignored when scoring a lag.
    /// `0` gives plain RMSE; the default keeps device artifact bursts from
    /// dominating the score.
    pub lag_trim_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            max_lag_search_s: 120,
            hr_min_bpm: 25.0,
            hr_max_bpm: 230.0,
            max_step_bpm_per_s: 40.0,
            min_overlap: 10,
            lag_trim_fraction: 0.5,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_lag_search_s < 0 {
            return Err(Error::config("ingest.max_lag_search_s must be >= 0"));
        }
        if !(self.hr_min_bpm.is_finite() && self.hr_max_bpm.is_finite() && self.hr_min_bpm < self.hr_max_bpm) {
            return Err(Error::config("ingest.hr_min_bpm must be < ingest.hr_max_bpm"));
        }
        if !(self.max_step_bpm_per_s.is_finite() && self.max_step_bpm_per_s > 0.0) {
            return Err(Error::config("ingest.max_step_bpm_per_s must be > 0"));
        }
        if !(0.0..1.0).contains(&self.lag_trim_fraction) {
            return Err(Error::config("ingest.lag_trim_fraction must be in [0, 1)"));
        }
        if self.min_overlap == 0 {
            return Err(Error::config("ingest.min_overlap must be >= 1"));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "max_lag_search_s" => self.max_lag_search_s = kv::parse_value(key, value)?,
            "hr_min_bpm" => self.hr_min_bpm = kv::parse_value(key, value)?,
            "hr_max_bpm" => self.hr_max_bpm = kv::parse_value(key, value)?,
            "max_step_bpm_per_s" => self.max_step_bpm_per_s = kv::parse_value(key, value)?,
            "min_overlap" => self.min_overlap = kv::parse_value(key, value)?,
            "lag_trim_fraction" => self.lag_trim_fraction = kv::parse_value(key, value)?,
            _ => return Err(Error::config(format!("unknown ingest key {key:?}"))),
        }
        Ok(())
    }
}

pub fn parse_series(path: &Path, sensor_id: &str, subject_id: &str) -> Result<HrSeries> {
    let file = fs::File::open(path)?;
    parse_series_from(file, path, sensor_id, subject_id)
}

/// Parse the `timestamp_utc,hr_bpm` format from any reader. `origin` is only
/// used in error messages.
pub fn parse_series_from<R: Read>(reader: R, origin: &Path, sensor_id: &str, subject_id: &str) -> Result<HrSeries> {
    let mut samples = Vec::new();
    for row in SeriesRows::new(reader, origin) {
        let (line, sample) = row?;
        if let Some(prev) = samples.last().map(|s: &HrSample| s.timestamp) {
            if sample.timestamp <= prev {
                return Err(parse_error(
                    origin,
                    line,
                    format!("timestamp {} does not follow {prev}", sample.timestamp),
                ));
            }
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(parse_error(origin, 1, "file contains no samples"));
    }
    HrSeries::new(sensor_id, subject_id, samples)
}

fn parse_error(origin: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Streaming row iterator over the ingest CSV format, yielding
/// `(line_number, sample)`. Used for file parsing and live input.
pub struct SeriesRows<R: Read> {
    lines: std::io::Lines<BufReader<R>>,
    origin: PathBuf,
    line: usize,
    header_seen: bool,
}

impl<R: Read> SeriesRows<R> {
    pub fn new(reader: R, origin: &Path) -> Self {
        Self {
            lines: BufReader::new(reader).lines(),
            origin: origin.to_path_buf(),
            line: 0,
            header_seen: false,
        }
    }
}

impl<R: Read> Iterator for SeriesRows<R> {
    type Item = Result<(usize, HrSample)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            let text = raw.trim_end_matches('\r').trim();
            if !self.header_seen {
                self.header_seen = true;
                let text = text.trim_start_matches('\u{feff}');
                if text != SERIES_HEADER {
                    return Some(Err(parse_error(
                        &self.origin,
                        self.line,
                        format!("expected header {SERIES_HEADER:?}, got {text:?}"),
                    )));
                }
                continue;
            }
            if text.is_empty() {
                continue;
            }
            return Some(
                parse_row(text)
                    .map(|s| (self.line, s))
                    .map_err(|msg| parse_error(&self.origin, self.line, msg)),
            );
        }
    }
}

fn parse_row(text: &str) -> std::result::Result<HrSample, String> {
    let mut fields = text.split(',');
    let (Some(ts), Some(hr), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(format!("expected 2 fields, got {text:?}"));
    };
    let timestamp: i64 = ts
        .trim()
        .parse()
        .map_err(|_| format!("invalid timestamp {:?}", ts.trim()))?;
    let hr: f64 = hr
        .trim()
        .parse()
        .map_err(|_| format!("invalid heart rate {:?}", hr.trim()))?;
    HrSample::new(timestamp, hr).map_err(|e| e.to_string())
}

pub fn write_series<W: Write>(series: &HrSeries, mut out: W) -> Result<()> {
    writeln!(out, "{SERIES_HEADER}")?;
    for s in series.samples() {
        writeln!(out, "{},{}", s.timestamp, s.hr_bpm)?;
    }
    Ok(())
}

/// Trimmed RMSE between `ecg(t)` and the PPG sample that lands on `t` once
/// `lag` is added to PPG timestamps: the largest `trim` fraction of squared
/// residuals is dropped before averaging. Returns `None` if fewer than
/// `min_overlap` timestamps coincide.
fn lagged_rmse(
    ppg: &[HrSample],
    ecg: &[HrSample],
    lag: i64,
    min_overlap: usize,
    trim: f64,
    squares: &mut Vec<f64>,
) -> Option<f64> {
    squares.clear();
    let (mut i, mut j) = (0, 0);
    while i < ppg.len() && j < ecg.len() {
        let tp = ppg[i].timestamp + lag;
        let te = ecg[j].timestamp;
        match tp.cmp(&te) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let d = ppg[i].hr_bpm - ecg[j].hr_bpm;
                squares.push(d * d);
                i += 1;
                j += 1;
            }
        }
    }
    let n = squares.len();
    if n < min_overlap || n == 0 {
        return None;
    }
    let keep = (((1.0 - trim) * n as f64).ceil() as usize).clamp(1, n);
    if keep < n {
        squares.select_nth_unstable_by(keep - 1, f64::total_cmp);
    }
    let sum: f64 = squares[..keep].iter().sum();
    Some((sum / keep as f64).sqrt())
}

/// Exhaustive integer lag search minimizing the (trimmed) RMSE. The returned
/// lag is the correction to add to PPG timestamps so they line up with the
/// reference. Ties go to the smallest |lag|, negative before positive.
pub fn find_lag(ppg: &HrSeries, ecg: &HrSeries, cfg: &IngestConfig) -> Result<i64> {
    cfg.validate()?;
    let no_overlap = Error::NoOverlap {
        max_lag: cfg.max_lag_search_s,
        min_overlap: cfg.min_overlap,
    };
    if ppg.is_empty() || ecg.is_empty() {
        return Err(no_overlap);
    }
    let candidates = std::iter::once(0).chain((1..=cfg.max_lag_search_s).flat_map(|m| [-m, m]));
    let mut best: Option<(i64, f64)> = None;
    let mut squares = Vec::with_capacity(ppg.len().min(ecg.len()));
    for lag in candidates {
        let scored = lagged_rmse(
            ppg.samples(),
            ecg.samples(),
            lag,
            cfg.min_overlap,
            cfg.lag_trim_fraction,
            &mut squares,
        );
        if let Some(rmse) = scored {
            if best.is_none_or(|(_, b)| rmse < b) {
                best = Some((lag, rmse));
            }
        }
    }
    best.map(|(lag, _)| lag).ok_or(no_overlap)
}

/// Drop readings outside `[hr_min_bpm, hr_max_bpm]` and readings that jump
/// more than `max_step_bpm_per_s` per elapsed second from the previous
/// retained reading. Removed readings become gaps.
pub fn plausibility_filter(series: &HrSeries, cfg: &IngestConfig) -> HrSeries {
    filter_impl(series, cfg, true)
}

/// Range check only. Applied to device series so the model still sees
/// abrupt device errors.
pub fn bounds_filter(series: &HrSeries, cfg: &IngestConfig) -> HrSeries {
    filter_impl(series, cfg, false)
}

fn filter_impl(series: &HrSeries, cfg: &IngestConfig, step_cap: bool) -> HrSeries {
    let mut kept: Vec<HrSample> = Vec::with_capacity(series.len());
    for s in series.samples() {
        if s.hr_bpm < cfg.hr_min_bpm || s.hr_bpm > cfg.hr_max_bpm {
            continue;
        }
        if step_cap {
            if let Some(prev) = kept.last() {
                let elapsed = (s.timestamp - prev.timestamp) as f64;
                if (s.hr_bpm - prev.hr_bpm).abs() > cfg.max_step_bpm_per_s * elapsed {
                    continue;
                }
            }
        }
        kept.push(*s);
    }
    series.with_samples(kept)
}

/// Filter both series, estimate and apply the PPG lag, and pair readings
/// present in both.
pub fn synchronize(ppg: &HrSeries, ecg: &HrSeries, cfg: &IngestConfig) -> Result<SyncedSeries> {
    let ppg = bounds_filter(ppg, cfg);
    let ecg = plausibility_filter(ecg, cfg);
    let lag = find_lag(&ppg, &ecg, cfg)?;
    let ppg = ppg.shifted(lag);

    let mut samples = Vec::new();
    let (p, e) = (ppg.samples(), ecg.samples());
    let (mut i, mut j) = (0, 0);
    while i < p.len() && j < e.len() {
        match p[i].timestamp.cmp(&e[j].timestamp) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                samples.push(make_synced_sample(p[i].timestamp, p[i].hr_bpm, e[j].hr_bpm)?);
                i += 1;
                j += 1;
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyIntersection(ecg.subject_id.clone()));
    }
    Ok(SyncedSeries {
        subject_id: ecg.subject_id.clone(),
        applied_lag_s: lag,
        samples,
    })
}

/// Write `<stem>.csv` and `<stem>.meta`. `source_counts` are the raw
/// (ppg, ecg) sample counts recorded in the sidecar.
pub fn write_synced(series: &SyncedSeries, csv_path: &Path, source_counts: (usize, usize)) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(csv_path)?);
    writeln!(out, "{SYNCED_HEADER}")?;
    for s in &series.samples {
        writeln!(out, "{},{},{},{}", s.timestamp, s.hr_ppg, s.hr_ecg, s.diff_true)?;
    }
    out.flush()?;
    let meta = kv::render([
        ("subject_id", series.subject_id.clone()),
        ("applied_lag_s", series.applied_lag_s.to_string()),
        ("ppg_samples", source_counts.0.to_string()),
        ("ecg_samples", source_counts.1.to_string()),
        ("synced_samples", series.len().to_string()),
    ]);
    fs::write(csv_path.with_extension("meta"), meta)?;
    Ok(())
}

pub fn read_synced(csv_path: &Path) -> Result<SyncedSeries> {
    let meta = kv::parse(&fs::read_to_string(csv_path.with_extension("meta"))?)?;
    let subject_id = meta
        .get("subject_id")
        .cloned()
        .ok_or_else(|| Error::format("sidecar missing subject_id"))?;
    let applied_lag_s = kv::parse_value(
        "applied_lag_s",
        meta.get("applied_lag_s").map(String::as_str).unwrap_or(""),
    )?;
    let text = fs::read_to_string(csv_path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == SYNCED_HEADER => {}
        _ => return Err(parse_error(csv_path, 1, format!("expected header {SYNCED_HEADER:?}"))),
    }
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(parse_error(csv_path, idx + 1, "expected 4 fields"));
        }
        let bad = || parse_error(csv_path, idx + 1, format!("malformed row {line:?}"));
        let ts: i64 = f[0].parse().map_err(|_| bad())?;
        let ppg: f64 = f[1].parse().map_err(|_| bad())?;
        let ecg: f64 = f[2].parse().map_err(|_| bad())?;
        if !seen.insert(ts) {
            return Err(parse_error(csv_path, idx + 1, "duplicate timestamp"));
        }
        samples.push(make_synced_sample(ts, ppg, ecg)?);
    }
    Ok(SyncedSeries {
        subject_id,
        applied_lag_s,
        samples,
    })
}

/// Timestamps of `synced` as a plain vector (handy for set checks).
pub fn timestamps(samples: &[SyncedSample]) -> Vec<i64> {
    samples.iter().map(|s| s.timestamp).collect()
}
