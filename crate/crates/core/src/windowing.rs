//! Rolling windows over synchronized series and the subject-level split.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{SyncedSeries, Window};
use crate::error::{Error, Result};
use crate::kv;

pub const DATASET_MAGIC: [u8; 8] = *b"HRWIN1\0\0";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub k: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { k: 10, stride: 1 }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config("window.k must be >= 2"));
        }
        if self.k > u16::MAX as usize {
            return Err(Error::config("window.k does not fit the dataset format"));
        }
        if self.stride < 1 || self.stride > self.k {
            return Err(Error::config("window.stride must be in 1..=k"));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k" => self.k = kv::parse_value(key, value)?,
            "stride" => self.stride = kv::parse_value(key, value)?,
            _ => return Err(Error::config(format!("unknown window key {key:?}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::format(format!("unknown split {other:?}"))),
        }
    }
}

/// Emit every window of `cfg.k` consecutive samples inside each gap-free
/// run, stepping by `cfg.stride` from the run start.
pub fn make_windows(series: &SyncedSeries, cfg: &WindowConfig) -> Vec<Window> {
    let k = cfg.k;
    let mut out = Vec::new();
    let mut start = 0;
    let samples = &series.samples;
    while start < samples.len() {
        let mut end = start + 1;
        while end < samples.len() && samples[end].timestamp == samples[end - 1].timestamp + 1 {
            end += 1;
        }
        let run = &samples[start..end];
        if run.len() >= k {
            for first in (0..=run.len() - k).step_by(cfg.stride) {
                let w = Window::from_samples(&run[first..first + k], k, &series.subject_id)
                    .expect("runs are gap-free by construction");
                out.push(w);
            }
        }
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub windows: Vec<Window>,
    pub split_manifest: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn subjects(&self, split: Split) -> Vec<&str> {
        self.split_manifest
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn windows_in(&self, split: Split) -> Vec<&Window> {
        self.windows
            .iter()
            .filter(|w| self.split_manifest.get(&w.subject_id) == Some(&split))
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.windows
            .iter()
            .filter(|w| self.split_manifest.get(&w.subject_id) == Some(&split))
            .count()
    }

    pub fn windows_per_subject(&self) -> BTreeMap<&str, usize> {
        let mut out: BTreeMap<&str, usize> = self.split_manifest.keys().map(|k| (k.as_str(), 0)).collect();
        for w in &self.windows {
            *out.entry(w.subject_id.as_str()).or_default() += 1;
        }
        out
    }
}

/// Number of train subjects for `n` subjects: `ceil(train_fraction * n)`.
pub fn train_subject_count(n: usize, train_fraction: f64) -> usize {
    // Guard against 0.8 * 10 = 8.000000000000002 style round-up.
    let raw = train_fraction * n as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Sort subjects by id, send the first `ceil(train_fraction * S)` to train
/// and the rest to test, then window every series.
pub fn split_by_subject(all: &[SyncedSeries], train_fraction: f64, cfg: &WindowConfig) -> Result<Dataset> {
    cfg.validate()?;
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut ids: Vec<&str> = all.iter().map(|s| s.subject_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Split(format!("need at least 2 subjects, got {}", ids.len())));
    }
    let n_train = train_subject_count(ids.len(), train_fraction);
    if n_train == 0 || n_train >= ids.len() {
        return Err(Error::Split(format!(
            "train_fraction {train_fraction} over {} subjects leaves a split empty",
            ids.len()
        )));
    }
    let manifest: BTreeMap<String, Split> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), if i < n_train { Split::Train } else { Split::Test }))
        .collect();

    let mut ordered: Vec<&SyncedSeries> = all.iter().collect();
    ordered.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let windows = ordered.iter().flat_map(|s| make_windows(s, cfg)).collect();
    Ok(Dataset {
        k: cfg.k,
        windows,
        split_manifest: manifest,
    })
}

pub fn manifest_path(dataset_path: &Path) -> PathBuf {
    let mut p = dataset_path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

/// Write the binary window stream and its text manifest
/// (`index,subject_id,split` per line).
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let index: BTreeMap<&str, u16> = dataset
        .split_manifest
        .keys()
        .enumerate()
        .map(|(i, id)| {
            u16::try_from(i)
                .map(|i| (id.as_str(), i))
                .map_err(|_| Error::format("too many subjects for the dataset format"))
        })
        .collect::<Result<_>>()?;
    let count =
        u32::try_from(dataset.windows.len()).map_err(|_| Error::format("too many windows for the dataset format"))?;
    let k = u16::try_from(dataset.k).map_err(|_| Error::format("k too large"))?;

    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(&DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&k.to_le_bytes())?;
    out.write_all(&count.to_le_bytes())?;
    for w in &dataset.windows {
        if w.k() != dataset.k {
            return Err(Error::LengthMismatch {
                expected: dataset.k,
                actual: w.k(),
            });
        }
        let subject = *index
            .get(w.subject_id.as_str())
            .ok_or_else(|| Error::format(format!("window subject {} missing from manifest", w.subject_id)))?;
        out.write_all(&w.end_timestamp.to_le_bytes())?;
        out.write_all(&k.to_le_bytes())?;
        for &v in &w.ppg_values {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
        out.write_all(&(w.label_diff_true as f32).to_le_bytes())?;
        out.write_all(&subject.to_le_bytes())?;
    }
    out.flush()?;

    let mut manifest = String::from("index,subject_id,split\n");
    for (id, split) in &dataset.split_manifest {
        manifest.push_str(&format!("{},{},{}\n", index[id.as_str()], id, split));
    }
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format("dataset file is truncated"))?;
        self.pos = end;
        Ok(slice.try_into().expect("slice length checked"))
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take::<8>()? != DATASET_MAGIC {
        return Err(Error::format("not a window dataset (bad magic)"));
    }
    let version = u16::from_le_bytes(cur.take()?);
    if version != DATASET_VERSION {
        return Err(Error::format(format!("unsupported dataset version {version}")));
    }
    let k = u16::from_le_bytes(cur.take()?) as usize;
    let count = u32::from_le_bytes(cur.take()?) as usize;

    let manifest_text = fs::read_to_string(manifest_path(path))?;
    let mut by_index: BTreeMap<u16, String> = BTreeMap::new();
    let mut split_manifest = BTreeMap::new();
    for (n, line) in manifest_text.lines().enumerate().skip(1) {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::format(format!("manifest line {}: expected 3 fields", n + 1)));
        }
        let idx: u16 = f[0]
            .parse()
            .map_err(|_| Error::format(format!("manifest line {}: bad index", n + 1)))?;
        by_index.insert(idx, f[1].to_string());
        split_manifest.insert(f[1].to_string(), f[2].parse()?);
    }

    let mut windows = Vec::with_capacity(count);
    for _ in 0..count {
        let end_timestamp = i64::from_le_bytes(cur.take()?);
        let wk = u16::from_le_bytes(cur.take()?) as usize;
        if wk != k {
            return Err(Error::format(format!("window length {wk} differs from header k={k}")));
        }
        let mut ppg_values = Vec::with_capacity(k);
        for _ in 0..k {
            ppg_values.push(f32::from_le_bytes(cur.take()?) as f64);
        }
        let label = f32::from_le_bytes(cur.take()?) as f64;
        let subject = u16::from_le_bytes(cur.take()?);
        let subject_id = by_index
            .get(&subject)
            .cloned()
            .ok_or_else(|| Error::format(format!("subject index {subject} not in manifest")))?;
        windows.push(Window {
            end_timestamp,
            ppg_values,
            label_diff_true: label,
            subject_id,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::format("trailing bytes after the last window"));
    }
    Ok(Dataset {
        k,
        windows,
        split_manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_synced_sample;
    use proptest::prelude::*;

    fn synced(subject: &str, ts: &[i64]) -> SyncedSeries {
        SyncedSeries {
            subject_id: subject.into(),
            applied_lag_s: 0,
            samples: ts
                .iter()
                .map(|&t| make_synced_sample(t, 60.0 + (t % 7) as f64, 62.0).unwrap())
                .collect(),
        }
    }

    fn run(start: i64, n: i64) -> Vec<i64> {
        (start..start + n).collect()
    }

    #[test]
    fn window_counts() {
        let cfg = WindowConfig::default();
        assert_eq!(make_windows(&synced("a", &run(0, 20)), &cfg).len(), 11);
        assert_eq!(make_windows(&synced("a", &run(0, 9)), &cfg).len(), 0);
    }

    /// Brute force: test every index range of length k and keep those without
    /// a discontinuity.
    fn brute_force_windows(ts: &[i64], k: usize) -> Vec<i64> {
        (0..ts.len().saturating_sub(k - 1))
            .filter(|&i| ts[i + k - 1] - ts[i] == (k - 1) as i64)
            .map(|i| ts[i + k - 1])
            .collect()
    }

    #[test]
    fn two_runs_separated_by_gap() {
        let mut ts = run(100, 15);
        ts.extend(run(200, 12));
        let oracle = brute_force_windows(&ts, 10);
        assert_eq!(oracle.len(), 9);
        let ws = make_windows(&synced("a", &ts), &WindowConfig::default());
        assert_eq!(ws.iter().map(|w| w.end_timestamp).collect::<Vec<_>>(), oracle);
    }

    #[test]
    fn stride_counts() {
        let cfg = WindowConfig { k: 10, stride: 3 };
        // floor((20 - 10) / 3) + 1
        assert_eq!(make_windows(&synced("a", &run(0, 20)), &cfg).len(), 4);
    }

    #[test]
    fn window_labels_are_end_sample_errors() {
        let s = synced("a", &run(0, 12));
        let ws = make_windows(&s, &WindowConfig::default());
        for w in &ws {
            let end = s.samples.iter().find(|x| x.timestamp == w.end_timestamp).unwrap();
            assert_eq!(w.label_diff_true, end.diff_true);
            assert_eq!(*w.ppg_values.last().unwrap(), end.hr_ppg);
        }
    }

    fn subjects(n: usize) -> Vec<SyncedSeries> {
        (0..n)
            .map(|i| synced(&format!("subject_{i:02}"), &run(0, 12)))
            .collect()
    }

    #[test]
    fn split_examples() {
        let cfg = WindowConfig::default();
        let d = split_by_subject(&subjects(32), 0.8, &cfg).unwrap();
        assert_eq!((d.subjects(Split::Train).len(), d.subjects(Split::Test).len()), (26, 6));
        let d = split_by_subject(&subjects(32), 0.78, &cfg).unwrap();
        assert_eq!((d.subjects(Split::Train).len(), d.subjects(Split::Test).len()), (25, 7));
        let d = split_by_subject(&subjects(2), 0.5, &cfg).unwrap();
        assert_eq!((d.subjects(Split::Train).len(), d.subjects(Split::Test).len()), (1, 1));
        assert!(split_by_subject(&subjects(5), 0.9, &cfg).is_err());
        assert!(split_by_subject(&subjects(1), 0.5, &cfg).is_err());
        assert!(split_by_subject(&subjects(4), 1.0, &cfg).is_err());
    }

    #[test]
    fn split_is_by_sorted_id() {
        let mut all = subjects(4);
        all.reverse();
        let d = split_by_subject(&all, 0.5, &WindowConfig::default()).unwrap();
        assert_eq!(d.subjects(Split::Train), vec!["subject_00", "subject_01"]);
        assert_eq!(d.count(Split::Train), 6);
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let d = split_by_subject(&subjects(3), 0.5, &WindowConfig::default()).unwrap();
        write_dataset(&d, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, d);
        let len = fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, 16 + d.windows.len() * (8 + 2 + 10 * 4 + 4 + 2));

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_dataset(&path).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn single_run_count_and_span(n in 0i64..60, k in 2usize..12) {
            let cfg = WindowConfig { k, stride: 1 };
            let ws = make_windows(&synced("a", &run(5, n)), &cfg);
            prop_assert_eq!(ws.len(), (n as usize + 1).saturating_sub(k));
            for w in &ws {
                prop_assert_eq!(w.ppg_values.len(), k);
            }
        }

        #[test]
        fn windows_never_span_gaps(gaps in proptest::collection::vec(1i64..4, 1..80)) {
            let mut t = 0;
            let ts: Vec<i64> = gaps.iter().map(|g| { t += g; t }).collect();
            let s = synced("a", &ts);
            let ws = make_windows(&s, &WindowConfig::default());
            prop_assert_eq!(ws.len(), brute_force_windows(&ts, 10).len());
            let set: std::collections::HashSet<i64> = ts.iter().copied().collect();
            for w in &ws {
                for back in 0..10 {
                    prop_assert!(set.contains(&(w.end_timestamp - back)));
                }
            }
        }

        #[test]
        fn subjects_are_disjoint(n in 2usize..40, frac in 0.05f64..0.95) {
            if let Ok(d) = split_by_subject(&subjects(n), frac, &WindowConfig::default()) {
                let train: std::collections::HashSet<_> = d.subjects(Split::Train).into_iter().collect();
                let test: std::collections::HashSet<_> = d.subjects(Split::Test).into_iter().collect();
                prop_assert!(train.is_disjoint(&test));
                prop_assert_eq!(train.len() + test.len(), n);
            }
        }
    }
}
