//! Threshold-sweep evaluation of predicted against true errors.
//!
//! Detection accuracy follows the warning-system convention
//! `100 * TP / (TP + FP)` over the unacceptable class (which is precision).
//! Undefined ratios are `None`, never 0 or 100.

use serde::Serialize;

use crate::domain::Window;
use crate::error::{Error, Result};
use crate::estimator::ErrorPredictor;

pub const DEFAULT_TAUS: [f64; 10] = [10.0, 20.0, 25.0, 30.0, 31.0, 32.0, 33.0, 34.0, 35.0, 40.0];
pub const DEFAULT_GT_THRESHOLDS: [f64; 11] = [3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 20.0, 25.0, 30.0];
pub const DEFAULT_TOLERANCES: [f64; 3] = [3.0, 5.0, 7.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    /// F1 in percent; undefined when there are no true positives to find.
    pub fn f1_pct(&self) -> Option<f64> {
        if self.tp + self.fn_ == 0 {
            return None;
        }
        Some(100.0 * 2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64)
    }

    pub fn accuracy_pct(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| 100.0 * (self.tp + self.tn) as f64 / total as f64)
    }
}

pub fn detection_accuracy(counts: &ConfusionCounts) -> Option<f64> {
    let flagged = counts.tp + counts.fp;
    (flagged > 0).then(|| 100.0 * counts.tp as f64 / flagged as f64)
}

/// True and predicted error for one evaluated window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorPair {
    pub diff_true: f64,
    pub diff_pred: f64,
}

pub fn predict_pairs<P: ErrorPredictor + ?Sized>(predictor: &P, windows: &[&Window]) -> Result<Vec<ErrorPair>> {
    let preds = predictor.predict_all(windows)?;
    Ok(windows
        .iter()
        .zip(preds)
        .map(|(w, diff_pred)| ErrorPair {
            diff_true: w.label_diff_true,
            diff_pred,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub detection_accuracy_pct: Option<f64>,
    pub counts: ConfusionCounts,
}

/// For each `tau`, a window is flagged when `diff_pred >= tau` and truly
/// unacceptable when `diff_true >= tau`.
pub fn threshold_sweep(pairs: &[ErrorPair], taus: &[f64]) -> Result<Vec<SweepRow>> {
    if pairs.is_empty() {
        return Err(Error::InvalidValue("threshold sweep needs at least one window".into()));
    }
    Ok(taus
        .iter()
        .map(|&tau| {
            let mut counts = ConfusionCounts::default();
            for p in pairs {
                counts.record(p.diff_true >= tau, p.diff_pred >= tau);
            }
            SweepRow {
                tau,
                detection_accuracy_pct: detection_accuracy(&counts),
                counts,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToleranceCell {
    pub gt_threshold: f64,
    pub tolerance: f64,
    /// `None` when `tolerance >= gt_threshold`.
    pub counts: Option<ConfusionCounts>,
    pub f1_pct: Option<f64>,
    pub accuracy_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToleranceTable {
    pub gt_thresholds: Vec<f64>,
    pub tolerances: Vec<f64>,
    /// Row-major: `cells[row * tolerances.len() + col]`.
    pub cells: Vec<ToleranceCell>,
}

impl ToleranceTable {
    pub fn cell(&self, row: usize, col: usize) -> &ToleranceCell {
        &self.cells[row * self.tolerances.len() + col]
    }
}

/// Rows are ground-truth error thresholds `g`, columns tolerances `t`. A
/// window is a true positive candidate when `diff_true >= g` and predicted
/// positive when `diff_pred >= g - t`.
pub fn tolerance_table(pairs: &[ErrorPair], gt_thresholds: &[f64], tolerances: &[f64]) -> Result<ToleranceTable> {
    if pairs.is_empty() {
        return Err(Error::InvalidValue("tolerance table needs at least one window".into()));
    }
    let mut cells = Vec::with_capacity(gt_thresholds.len() * tolerances.len());
    for &g in gt_thresholds {
        for &t in tolerances {
            if t >= g {
                cells.push(ToleranceCell {
                    gt_threshold: g,
                    tolerance: t,
                    counts: None,
                    f1_pct: None,
                    accuracy_pct: None,
                });
                continue;
            }
            let cut = g - t;
            let mut counts = ConfusionCounts::default();
            for p in pairs {
                counts.record(p.diff_true >= g, p.diff_pred >= cut);
            }
            cells.push(ToleranceCell {
                gt_threshold: g,
                tolerance: t,
                counts: Some(counts),
                f1_pct: counts.f1_pct(),
                accuracy_pct: counts.accuracy_pct(),
            });
        }
    }
    Ok(ToleranceTable {
        gt_thresholds: gt_thresholds.to_vec(),
        tolerances: tolerances.to_vec(),
        cells,
    })
}

/// Fixed-width `xx.xx` or `n/a`.
pub fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("tau,detection_accuracy_pct,tp,fp,tn,fn\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.tau,
            r.detection_accuracy_pct.map_or(String::new(), |v| v.to_string()),
            r.counts.tp,
            r.counts.fp,
            r.counts.tn,
            r.counts.fn_
        ));
    }
    out
}

pub fn sweep_text(rows: &[SweepRow], label: &str) -> String {
    let mut out = format!("{:>6} | {:>28} | {:>8} {:>8}\n", "tau", label, "TP", "FP");
    out.push_str(&format!("{}\n", "-".repeat(6 + 3 + 28 + 3 + 17)));
    for r in rows {
        out.push_str(&format!(
            "{:>6} | {:>28} | {:>8} {:>8}\n",
            r.tau,
            fmt_pct(r.detection_accuracy_pct),
            r.counts.tp,
            r.counts.fp
        ));
    }
    out.push_str("detection accuracy = 100 * TP / (TP + FP); a window is flagged when diff_pred >= tau\n");
    out
}

pub fn tolerance_csv(table: &ToleranceTable) -> String {
    let mut out = String::from("gt_threshold,tolerance,f1_pct,accuracy_pct,tp,fp,tn,fn\n");
    for c in &table.cells {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let (tp, fp, tn, fn_) = c
            .counts
            .map_or((String::new(), String::new(), String::new(), String::new()), |k| {
                (k.tp.to_string(), k.fp.to_string(), k.tn.to_string(), k.fn_.to_string())
            });
        out.push_str(&format!(
            "{},{},{},{},{tp},{fp},{tn},{fn_}\n",
            c.gt_threshold,
            c.tolerance,
            opt(c.f1_pct),
            opt(c.accuracy_pct)
        ));
    }
    out
}

pub fn tolerance_text(table: &ToleranceTable) -> String {
    let mut out = format!("{:>8} |", "GT diff");
    for t in &table.tolerances {
        out.push_str(&format!(" {:^17} |", format!("tol = {t}")));
    }
    out.push('\n');
    out.push_str(&format!("{:>8} |", ""));
    for _ in &table.tolerances {
        out.push_str(&format!(" {:>8} {:>8} |", "F1", "Acc"));
    }
    out.push('\n');
    for (r, g) in table.gt_thresholds.iter().enumerate() {
        out.push_str(&format!("{g:>8} |"));
        for c in 0..table.tolerances.len() {
            let cell = table.cell(r, c);
            if cell.counts.is_none() {
                out.push_str(&format!(" {:>8} {:>8} |", "", ""));
            } else {
                out.push_str(&format!(
                    " {:>8} {:>8} |",
                    fmt_pct(cell.f1_pct),
                    fmt_pct(cell.accuracy_pct)
                ));
            }
        }
        out.push('\n');
    }
    out.push_str(
        "interpretation: rows are ground-truth error thresholds g; a window is positive when \
         diff_true >= g and predicted positive when diff_pred >= g - tolerance; blank cells have \
         tolerance >= g\n",
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(t: &[f64], p: &[f64]) -> Vec<ErrorPair> {
        t.iter()
            .zip(p)
            .map(|(&diff_true, &diff_pred)| ErrorPair { diff_true, diff_pred })
            .collect()
    }

    #[test]
    fn detection_accuracy_examples() {
        let c = |tp, fp| ConfusionCounts { tp, fp, tn: 0, fn_: 0 };
        assert_eq!(detection_accuracy(&c(86, 14)), Some(86.0));
        assert_eq!(detection_accuracy(&c(0, 5)), Some(0.0));
        assert_eq!(detection_accuracy(&c(3, 0)), Some(100.0));
        assert_eq!(detection_accuracy(&c(0, 0)), None);
    }

    #[test]
    fn hand_fixture() {
        let ps = pairs(&[0.0, 5.0, 15.0, 25.0, 35.0, 50.0], &[2.0, 4.0, 22.0, 18.0, 40.0, 45.0]);
        let rows = threshold_sweep(&ps, &[20.0]).unwrap();
        let c = rows[0].counts;
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 1, 1, 2));
        assert_eq!(fmt_pct(rows[0].detection_accuracy_pct), "66.67");
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let t = [0.0, 12.0, 21.0, 33.0, 41.0, 8.0];
        let perfect = threshold_sweep(&pairs(&t, &t), &DEFAULT_TAUS).unwrap();
        for r in &perfect {
            if r.counts.tp + r.counts.fp > 0 {
                assert_eq!(r.detection_accuracy_pct, Some(100.0));
            }
            assert_eq!((r.counts.fp, r.counts.fn_), (0, 0));
        }
        let zero = threshold_sweep(&pairs(&t, &[0.0; 6]), &DEFAULT_TAUS).unwrap();
        assert!(zero.iter().all(|r| r.detection_accuracy_pct.is_none()));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(threshold_sweep(&[], &[10.0]).is_err());
        assert!(tolerance_table(&[], &[10.0], &[3.0]).is_err());
    }

    #[test]
    fn tolerance_marks_inapplicable_cells() {
        let t = [1.0, 4.0, 9.0];
        let table = tolerance_table(&pairs(&t, &t), &[3.0, 5.0], &[3.0, 5.0]).unwrap();
        assert!(table.cell(0, 0).counts.is_none());
        assert!(table.cell(0, 1).counts.is_none());
        assert!(table.cell(1, 0).counts.is_some());
        assert!(table.cell(1, 1).counts.is_none());
    }

    #[test]
    fn tolerance_zero_matches_sweep() {
        let t = [0.5, 3.0, 7.0, 12.0, 25.0, 31.0];
        let p = [1.0, 2.0, 9.0, 10.0, 28.0, 30.0];
        let ps = pairs(&t, &p);
        let g = [3.0, 10.0, 25.0];
        let table = tolerance_table(&ps, &g, &[0.0]).unwrap();
        let sweep = threshold_sweep(&ps, &g).unwrap();
        for (i, row) in sweep.iter().enumerate() {
            assert_eq!(table.cell(i, 0).counts, Some(row.counts));
        }
    }

    #[test]
    fn perfect_predictor_f1() {
        let t = [0.0, 3.5, 6.0, 8.0, 22.0, 31.0];
        let table = tolerance_table(&pairs(&t, &t), &DEFAULT_GT_THRESHOLDS, &DEFAULT_TOLERANCES).unwrap();
        for c in &table.cells {
            if let Some(counts) = c.counts {
                if counts.tp + counts.fn_ > 0 {
                    // loosened cut can add false positives but no misses
                    assert_eq!(counts.fn_, 0);
                }
            }
        }
        let exact = tolerance_table(&pairs(&t, &t), &[6.0], &[0.0]).unwrap();
        assert_eq!(exact.cells[0].f1_pct, Some(100.0));
    }

    #[test]
    fn all_negative_truth_has_no_f1() {
        let t = [0.0, 1.0, 2.0];
        let table = tolerance_table(&pairs(&t, &[5.0, 6.0, 7.0]), &[10.0], &[5.0]).unwrap();
        assert_eq!(table.cells[0].f1_pct, None);
        assert!(table.cells[0].accuracy_pct.is_some());
    }

    #[test]
    fn renderings_have_a_row_per_tau() {
        let t = [1.0, 22.0, 35.0];
        let rows = threshold_sweep(&pairs(&t, &t), &DEFAULT_TAUS).unwrap();
        assert_eq!(sweep_csv(&rows).lines().count(), 11);
        assert!(sweep_text(&rows, "detection accuracy").contains("n/a"));
        let table = tolerance_table(&pairs(&t, &t), &DEFAULT_GT_THRESHOLDS, &DEFAULT_TOLERANCES).unwrap();
        assert_eq!(tolerance_csv(&table).lines().count(), 1 + 33);
        assert!(tolerance_text(&table).contains("interpretation"));
    }

    proptest! {
        #[test]
        fn counts_sum_to_total(v in proptest::collection::vec((0.0f64..60.0, 0.0f64..60.0), 1..200)) {
            let ps: Vec<ErrorPair> = v.iter().map(|&(a, b)| ErrorPair { diff_true: a, diff_pred: b }).collect();
            for r in threshold_sweep(&ps, &DEFAULT_TAUS).unwrap() {
                prop_assert_eq!(r.counts.total(), ps.len() as u64);
            }
        }

        #[test]
        fn identity_tolerance_keeps_every_true_positive(v in proptest::collection::vec(0.0f64..60.0, 1..200), g in 8.0f64..40.0) {
            let ps: Vec<ErrorPair> = v.iter().map(|&a| ErrorPair { diff_true: a, diff_pred: a }).collect();
            let table = tolerance_table(&ps, &[g], &[0.0, 1.0, 3.0, 5.0, 7.0]).unwrap();
            let counts: Vec<ConfusionCounts> = table.cells.iter().map(|c| c.counts.unwrap()).collect();
            for pair in counts.windows(2) {
                prop_assert!(pair[1].tp >= pair[0].tp);
                prop_assert_eq!(pair[1].fn_, 0);
                // the looser cut only adds false positives, so F1 can only fall
                if let (Some(a), Some(b)) = (pair[0].f1_pct(), pair[1].f1_pct()) {
                    prop_assert!(b <= a);
                }
            }
        }
    }
}
