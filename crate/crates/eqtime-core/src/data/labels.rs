//! Binary labels by the mean-plus-one-standard-deviation rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which split a value series came from. Label statistics may only be
/// fit on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

/// Per-target mean and population standard deviation, fit once on the
/// training split and then applied everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub mean: f64,
    pub std: f64,
    fitted_on: SplitKind,
}

impl LabelStats {
    pub fn fit(values: &[f64], origin: SplitKind) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("cannot fit label stats on no values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(LabelStats {
            mean,
            std: var.sqrt(),
            fitted_on: origin,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.mean + self.std
    }
}

/// Label each value 1 iff it is at least one standard deviation over the
/// mean (inclusive). A constant series (std = 0) labels 1 only for
/// values strictly above the mean, i.e. never.
pub fn threshold_labels(values: &[f64], stats: &LabelStats) -> Result<Vec<u8>> {
    if stats.fitted_on != SplitKind::Train {
        return Err(Error::Contract(format!(
            "label statistics must come from the training split, got {:?}",
            stats.fitted_on
        )));
    }
    Ok(values
        .iter()
        .map(|&v| {
            let hit = if stats.std == 0.0 {
                v > stats.mean
            } else {
                v >= stats.threshold()
            };
            u8::from(hit)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen from direct arithmetic: mean 2.5, population std
    // sqrt(18.75) ~ 4.3301, threshold ~ 6.8301.
    #[test]
    fn spike_series_labels_only_the_spike() {
        let vals = [0.0, 0.0, 0.0, 10.0];
        let stats = LabelStats::fit(&vals, SplitKind::Train).unwrap();
        assert!((stats.mean - 2.5).abs() < 1e-12);
        assert!((stats.std - 18.75f64.sqrt()).abs() < 1e-12);
        assert_eq!(threshold_labels(&vals, &stats).unwrap(), vec![0, 0, 0, 1]);
    }

    #[test]
    fn constant_series_gets_no_positives() {
        let vals = [5.0, 5.0, 5.0];
        let stats = LabelStats::fit(&vals, SplitKind::Train).unwrap();
        assert_eq!(stats.std, 0.0);
        assert_eq!(threshold_labels(&vals, &stats).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn value_exactly_at_threshold_is_positive() {
        let stats = LabelStats::fit(&[0.0, 2.0], SplitKind::Train).unwrap();
        // mean 1, std 1, threshold 2: the inclusive rule labels 2.0 as 1
        assert_eq!(threshold_labels(&[2.0], &stats).unwrap(), vec![1]);
        assert_eq!(threshold_labels(&[1.999_999], &stats).unwrap(), vec![0]);
    }

    #[test]
    fn non_training_statistics_are_rejected() {
        let stats = LabelStats::fit(&[1.0, 2.0], SplitKind::Test).unwrap();
        assert!(matches!(
            threshold_labels(&[1.0], &stats),
            Err(Error::Contract(_))
        ));
    }
}
