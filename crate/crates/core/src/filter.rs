//! Maps a predicted error onto the traffic-light label. Each threshold
//! belongs to the more severe tier.

use crate::domain::{AccuracyLabel, FilterThresholds};
use crate::error::{Error, Result};

pub fn classify(diff_pred: f64, th: &FilterThresholds) -> Result<AccuracyLabel> {
    if !diff_pred.is_finite() || diff_pred < 0.0 {
        return Err(Error::InvalidValue(format!(
            "predicted error must be finite and >= 0, got {diff_pred}"
        )));
    }
    Ok(if diff_pred < th.tau_a() {
        AccuracyLabel::Acceptable
    } else if diff_pred < th.tau_b() {
        AccuracyLabel::Marginal
    } else {
        AccuracyLabel::Unacceptable
    })
}
