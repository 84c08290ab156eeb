//! Welch's t-test over seed-replicated run metrics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::train::RunResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mean_a: f64,
    pub std_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
    pub p_value: f64,
}

fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Two-sided Welch t-test on two samples of final metrics.
pub fn compare_metrics(a: &[f64], b: &[f64]) -> Result<Comparison> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Statistics(format!(
            "need at least 2 runs per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mean_a, std_a) = mean_and_sample_std(a);
    let (mean_b, std_b) = mean_and_sample_std(b);
    let va = std_a * std_a / a.len() as f64;
    let vb = std_b * std_b / b.len() as f64;
    let se = (va + vb).sqrt();
    let p_value = if se == 0.0 {
        // zero variance on both sides: identical means are indistinguishable,
        // different means are separated with certainty
        if mean_a == mean_b {
            1.0
        } else {
            0.0
        }
    } else {
        let t = (mean_a - mean_b) / se;
        let df = (va + vb) * (va + vb)
            / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
        let dist = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::Statistics(format!("t distribution: {e}")))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Comparison {
        mean_a,
        std_a,
        mean_b,
        std_b,
        p_value,
    })
}

/// [`compare_metrics`] over the final test metrics of two run lists.
pub fn compare_runs(a: &[RunResult], b: &[RunResult]) -> Result<Comparison> {
    let xs: Vec<f64> = a.iter().map(|r| r.test_metric).collect();
    let ys: Vec<f64> = b.iter().map(|r| r.test_metric).collect();
    compare_metrics(&xs, &ys)
}
