//! Deterministic paired-sensor generator: a mean-reverting reference HR path
//! and a device channel with bounded jitter, offset bursts, dropouts and a
//! constant clock lag.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::domain::{HrSample, HrSeries};
use crate::error::{Error, Result};
use crate::ingest::write_series;
use crate::kv;

pub const START_TIMESTAMP: i64 = 1_700_000_000;
pub const PPG_SENSOR: &str = "ppg";
pub const ECG_SENSOR: &str = "ecg";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub duration_s: usize,
    pub seed: u64,
    pub hr_base_range: (f64, f64),
    /// Pull per second towards the subject's base HR.
    pub reversion_rate: f64,
    /// Diffusion in bpm per sqrt(second).
    pub volatility: f64,
    pub hr_clamp: (f64, f64),
    pub artifact_rate_per_hour: f64,
    pub artifact_duration_s: (u32, u32),
    pub artifact_magnitude_bpm: (f64, f64),
    pub ramp_s: u32,
    pub jitter_std: f64,
    pub dropout_rate: f64,
    /// Fixed lag added to every device timestamp; `None` draws one per
    /// subject from `[-30, 30]`.
    pub clock_lag_s: Option<i64>,
    /// Window length the data must support (used for validation only).
    pub k: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 12,
            duration_s: 7200,
            seed: 42,
            hr_base_range: (50.0, 90.0),
            reversion_rate: 0.01,
            volatility: 0.5,
            hr_clamp: (40.0, 180.0),
            artifact_rate_per_hour: 12.0,
            artifact_duration_s: (5, 120),
            artifact_magnitude_bpm: (10.0, 60.0),
            ramp_s: 2,
            jitter_std: 1.0,
            dropout_rate: 0.01,
            clock_lag_s: None,
            k: 10,
        }
    }
}

pub const JITTER_CAP_STD: f64 = 6.0;
const LAG_RANGE: i64 = 30;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synth: {m}")));
        if self.n_subjects == 0 {
            return bad("n_subjects must be >= 1");
        }
        if self.duration_s < 10 * self.k {
            return bad("duration_s must be at least 10 * k");
        }
        let (lo, hi) = self.hr_base_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
            return bad("hr_base range must satisfy 0 < min < max");
        }
        let (clo, chi) = self.hr_clamp;
        if !(clo.is_finite() && chi.is_finite() && 0.0 < clo && clo < chi) {
            return bad("hr clamp must satisfy 0 < min < max");
        }
        if !(self.reversion_rate > 0.0 && self.reversion_rate <= 1.0) {
            return bad("reversion_rate must be in (0, 1]");
        }
        if !(self.volatility.is_finite() && self.volatility >= 0.0) {
            return bad("volatility must be >= 0");
        }
        if !(self.artifact_rate_per_hour.is_finite() && self.artifact_rate_per_hour >= 0.0) {
            return bad("artifact_rate_per_hour must be >= 0");
        }
        let (dlo, dhi) = self.artifact_duration_s;
        if dlo == 0 || dlo > dhi {
            return bad("artifact duration range must satisfy 1 <= min <= max");
        }
        let (mlo, mhi) = self.artifact_magnitude_bpm;
        if !(mlo.is_finite() && mhi.is_finite() && 0.0 <= mlo && mlo < mhi) {
            return bad("artifact magnitude range must satisfy 0 <= min < max");
        }
        if !(self.jitter_std.is_finite() && self.jitter_std >= 0.0) {
            return bad("jitter_std must be >= 0");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_subjects" => self.n_subjects = kv::parse_value(key, value)?,
            "duration_s" => self.duration_s = kv::parse_value(key, value)?,
            "seed" => self.seed = kv::parse_value(key, value)?,
            "hr_base_min" => self.hr_base_range.0 = kv::parse_value(key, value)?,
            "hr_base_max" => self.hr_base_range.1 = kv::parse_value(key, value)?,
            "reversion_rate" => self.reversion_rate = kv::parse_value(key, value)?,
            "volatility" => self.volatility = kv::parse_value(key, value)?,
            "hr_clamp_min" => self.hr_clamp.0 = kv::parse_value(key, value)?,
            "hr_clamp_max" => self.hr_clamp.1 = kv::parse_value(key, value)?,
            "artifact_rate_per_hour" => self.artifact_rate_per_hour = kv::parse_value(key, value)?,
            "artifact_duration_min_s" => self.artifact_duration_s.0 = kv::parse_value(key, value)?,
            "artifact_duration_max_s" => self.artifact_duration_s.1 = kv::parse_value(key, value)?,
            "artifact_magnitude_min" => self.artifact_magnitude_bpm.0 = kv::parse_value(key, value)?,
            "artifact_magnitude_max" => self.artifact_magnitude_bpm.1 = kv::parse_value(key, value)?,
            "ramp_s" => self.ramp_s = kv::parse_value(key, value)?,
            "jitter_std" => self.jitter_std = kv::parse_value(key, value)?,
            "dropout_rate" => self.dropout_rate = kv::parse_value(key, value)?,
            "clock_lag_s" => {
                self.clock_lag_s = match value.trim() {
                    "random" => None,
                    v => Some(kv::parse_value(key, v)?),
                }
            }
            _ => return Err(Error::config(format!("unknown synth key {key:?}"))),
        }
        Ok(())
    }
}

/// One offset burst on the device channel, in reference time. Covers
/// timestamps `start_ts..=end_ts`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    pub start_ts: i64,
    pub end_ts: i64,
    pub magnitude_bpm: f64,
}

impl Burst {
    pub fn contains(&self, ts: i64) -> bool {
        (self.start_ts..=self.end_ts).contains(&ts)
    }

    /// Offset factor in `[0, 1]`: linear ramps of `ramp` samples at both
    /// ends, full magnitude in between.
    fn factor(&self, ts: i64, ramp: u32) -> f64 {
        if !self.contains(ts) {
            return 0.0;
        }
        let from_start = (ts - self.start_ts + 1) as f64;
        let from_end = (self.end_ts - ts + 1) as f64;
        let r = ramp as f64 + 1.0;
        (from_start / r).min(from_end / r).min(1.0)
    }

    /// Timestamps at full magnitude (past both ramps).
    pub fn plateau(&self, ramp: u32) -> std::ops::RangeInclusive<i64> {
        self.start_ts + ramp as i64..=self.end_ts - ramp as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub subject_id: String,
    pub ppg: HrSeries,
    pub ecg: HrSeries,
    pub bursts: Vec<Burst>,
    pub lag_s: i64,
}

pub fn subject_id(index: usize, n_subjects: usize) -> String {
    let width = n_subjects.to_string().len().max(2);
    format!("subject_{:0width$}", index + 1)
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<SubjectData>> {
    cfg.validate()?;
    (0..cfg.n_subjects).map(|i| generate_subject(cfg, i)).collect()
}

pub fn generate_subject(cfg: &SynthConfig, index: usize) -> Result<SubjectData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(index as u64));
    let id = subject_id(index, cfg.n_subjects);
    let n = cfg.duration_s;

    let base = rng.random_range(cfg.hr_base_range.0..cfg.hr_base_range.1);
    let lag_s = match cfg.clock_lag_s {
        Some(l) => l,
        None => rng.random_range(-LAG_RANGE..=LAG_RANGE),
    };
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut ecg_values = Vec::with_capacity(n);
    let mut hr = base.clamp(cfg.hr_clamp.0, cfg.hr_clamp.1);
    for _ in 0..n {
        ecg_values.push(hr);
        let shock: f64 = std_normal.sample(&mut rng);
        hr += cfg.reversion_rate * (base - hr) + cfg.volatility * shock;
        hr = hr.clamp(cfg.hr_clamp.0, cfg.hr_clamp.1);
    }

    let mut bursts = Vec::new();
    if cfg.artifact_rate_per_hour > 0.0 {
        let gap = Exp::new(cfg.artifact_rate_per_hour / 3600.0).expect("positive rate");
        let mut t = 0.0f64;
        loop {
            t += gap.sample(&mut rng);
            let start = t.floor() as usize;
            if start >= n {
                break;
            }
            let dur = rng.random_range(cfg.artifact_duration_s.0..=cfg.artifact_duration_s.1);
            let mag = rng.random_range(cfg.artifact_magnitude_bpm.0..cfg.artifact_magnitude_bpm.1);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let end = (start + dur as usize - 1).min(n - 1);
            bursts.push(Burst {
                start_ts: START_TIMESTAMP + start as i64,
                end_ts: START_TIMESTAMP + end as i64,
                magnitude_bpm: sign * mag,
            });
            t = (end + 1) as f64;
        }
    }

    let cap = JITTER_CAP_STD * cfg.jitter_std;
    let mut ppg = Vec::with_capacity(n);
    let mut burst_iter = bursts.iter().peekable();
    for (i, &truth) in ecg_values.iter().enumerate() {
        let ts = START_TIMESTAMP + i as i64;
        while burst_iter.peek().is_some_and(|b| b.end_ts < ts) {
            burst_iter.next();
        }
        let offset = burst_iter
            .peek()
            .map_or(0.0, |b| b.magnitude_bpm * b.factor(ts, cfg.ramp_s));
        let jitter = if cfg.jitter_std > 0.0 {
            (cfg.jitter_std * std_normal.sample(&mut rng)).clamp(-cap, cap)
        } else {
            0.0
        };
        let dropped = cfg.dropout_rate > 0.0 && rng.random_bool(cfg.dropout_rate);
        let value = truth + jitter + offset;
        // a negative burst can push the device below zero; such readings
        // become dropouts
        if dropped || value <= 0.0 {
            continue;
        }
        ppg.push(HrSample::new(ts + lag_s, value)?);
    }

    let ecg = ecg_values
        .iter()
        .enumerate()
        .map(|(i, &v)| HrSample::new(START_TIMESTAMP + i as i64, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubjectData {
        ppg: HrSeries::new(PPG_SENSOR, &id, ppg)?,
        ecg: HrSeries::new(ECG_SENSOR, &id, ecg)?,
        subject_id: id,
        bursts,
        lag_s,
    })
}

pub fn series_path(dir: &Path, subject_id: &str, sensor: &str) -> PathBuf {
    dir.join(format!("{subject_id}_{sensor}.csv"))
}

pub const BURSTS_FILE: &str = "truth_bursts.csv";
pub const LAGS_FILE: &str = "truth_lags.csv";

/// Write every subject's two series plus the truth sidecars into `dir`.
/// Returns the paths of the series files in subject order.
pub fn write_subjects(subjects: &[SubjectData], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let mut bursts = String::from("subject_id,start_ts,end_ts,magnitude_bpm\n");
    let mut lags = String::from("subject_id,lag_s\n");
    for s in subjects {
        for series in [&s.ppg, &s.ecg] {
            let path = series_path(dir, &s.subject_id, &series.sensor_id);
            let mut buf = Vec::new();
            write_series(series, &mut buf)?;
            fs::write(&path, buf)?;
            paths.push(path);
        }
        for b in &s.bursts {
            let _ = writeln!(
                bursts,
                "{},{},{},{}",
                s.subject_id, b.start_ts, b.end_ts, b.magnitude_bpm
            );
        }
        let _ = writeln!(lags, "{},{}", s.subject_id, s.lag_s);
    }
    fs::write(dir.join(BURSTS_FILE), bursts)?;
    fs::write(dir.join(LAGS_FILE), lags)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{find_lag, synchronize, IngestConfig};

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 2,
            duration_s: 1800,
            ..Default::default()
        }
    }

    #[test]
    fn degenerate_config_gives_identical_channels() {
        let cfg = SynthConfig {
            artifact_rate_per_hour: 0.0,
            jitter_std: 0.0,
            dropout_rate: 0.0,
            clock_lag_s: Some(0),
            ..small()
        };
        for s in generate(&cfg).unwrap() {
            assert_eq!(s.ppg.samples(), s.ecg.samples());
            let synced = synchronize(&s.ppg, &s.ecg, &IngestConfig::default()).unwrap();
            assert!(synced.samples.iter().all(|x| x.diff_true == 0.0));
        }
    }

    #[test]
    fn injected_lag_is_recovered() {
        let cfg = SynthConfig {
            clock_lag_s: Some(7),
            ..small()
        };
        let s = generate_subject(&cfg, 0).unwrap();
        assert_eq!(find_lag(&s.ppg, &s.ecg, &IngestConfig::default()).unwrap(), -7);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_subjects(&generate(&small()).unwrap(), a.path()).unwrap();
        write_subjects(&generate(&small()).unwrap(), b.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 2 * 2 + 2);
        for name in names {
            assert_eq!(
                fs::read(a.path().join(&name)).unwrap(),
                fs::read(b.path().join(&name)).unwrap()
            );
        }
        let other = SynthConfig { seed: 43, ..small() };
        assert_ne!(generate(&other).unwrap()[0].ecg, generate(&small()).unwrap()[0].ecg);
    }

    #[test]
    fn noise_and_burst_bounds() {
        let cfg = SynthConfig {
            clock_lag_s: Some(0),
            ..SynthConfig {
                n_subjects: 3,
                ..Default::default()
            }
        };
        let cap = JITTER_CAP_STD * cfg.jitter_std;
        let mut plateau_checked = 0;
        for s in generate(&cfg).unwrap() {
            let ecg: std::collections::HashMap<i64, f64> =
                s.ecg.samples().iter().map(|x| (x.timestamp, x.hr_bpm)).collect();
            for p in s.ppg.samples() {
                let d = (p.hr_bpm - ecg[&p.timestamp]).abs();
                match s.bursts.iter().find(|b| b.contains(p.timestamp)) {
                    None => assert!(d <= cap, "clean sample off by {d}"),
                    Some(b) if b.plateau(cfg.ramp_s).contains(&p.timestamp) => {
                        assert!(d >= b.magnitude_bpm.abs() - cap, "plateau off by only {d}");
                        plateau_checked += 1;
                    }
                    Some(_) => {}
                }
            }
            assert!(s.ecg.samples().iter().all(|x| (40.0..=180.0).contains(&x.hr_bpm)));
        }
        assert!(plateau_checked > 100);
    }

    #[test]
    fn bursts_are_disjoint_and_bounded() {
        let s = generate_subject(&SynthConfig::default(), 0).unwrap();
        assert!(!s.bursts.is_empty());
        for pair in s.bursts.windows(2) {
            assert!(pair[0].end_ts < pair[1].start_ts);
        }
        for b in &s.bursts {
            let len = b.end_ts - b.start_ts + 1;
            assert!(len <= 120);
            assert!((10.0..60.0).contains(&b.magnitude_bpm.abs()));
        }
    }

    #[test]
    fn ramp_shape() {
        let b = Burst {
            start_ts: 0,
            end_ts: 4,
            magnitude_bpm: 30.0,
        };
        let f: Vec<f64> = (-1..=5).map(|t| b.factor(t, 2)).collect();
        assert_eq!(f, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(b.plateau(2), 2..=2);
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(generate(&SynthConfig {
            duration_s: 50,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            hr_base_range: (90.0, 50.0),
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            dropout_rate: 1.0,
            ..small()
        })
        .is_err());
        let mut cfg = small();
        assert!(cfg.set("bogus", "1").is_err());
        cfg.set("clock_lag_s", "random").unwrap();
        assert_eq!(cfg.clock_lag_s, None);
    }
}
