//! Macro-averaged F1 and perplexity.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct F1Result {
    pub per_class: Vec<f64>,
    pub macro_f1: f64,
}

/// Per-class F1 at a probability threshold, macro-averaged without
/// class weighting. A class with no positive predictions and no
/// positive labels scores 0 by convention.
pub fn f1_multilabel(
    probs: &[f64],
    labels: &[f64],
    classes: usize,
    threshold: f64,
) -> Result<F1Result> {
    if probs.len() != labels.len() || classes == 0 || probs.len() % classes != 0 {
        return Err(Error::Dimension(format!(
            "f1: {} probs vs {} labels with {classes} classes",
            probs.len(),
            labels.len()
        )));
    }
    let rows = probs.len() / classes;
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fn_ = 0u64;
        for r in 0..rows {
            let pred = probs[r * classes + c] >= threshold;
            let truth = labels[r * classes + c] >= 0.5;
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        per_class.push(f1);
    }
    let macro_f1 = per_class.iter().sum::<f64>() / classes as f64;
    Ok(F1Result { per_class, macro_f1 })
}

#[derive(Debug, Clone, Copy)]
pub struct PerplexityResult {
    pub value: f64,
    /// How many live targets had their probability clamped up to 1e-12.
    pub clamped: usize,
}

/// exp(mean over live steps of -log p(target)), from row-normalized
/// per-step distributions `[rows, vocab]`.
pub fn perplexity(
    probs: &[f64],
    vocab: usize,
    targets: &[i64],
    live: &[bool],
) -> Result<PerplexityResult> {
    if vocab == 0 || probs.len() % vocab != 0 {
        return Err(Error::Dimension("perplexity: probs not [rows, vocab]".into()));
    }
    let rows = probs.len() / vocab;
    if targets.len() != rows || live.len() != rows {
        return Err(Error::Dimension(format!(
            "perplexity: {rows} rows vs {} targets / {} live flags",
            targets.len(),
            live.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut clamped = 0usize;
    for r in 0..rows {
        if !live[r] {
            continue;
        }
        let t = targets[r];
        if t < 0 || t as usize >= vocab {
            return Err(Error::Contract(format!(
                "perplexity target {t} outside vocab {vocab}"
            )));
        }
        let mut p = probs[r * vocab + t as usize];
        if p < 1e-12 {
            p = 1e-12;
            clamped += 1;
        }
        total -= p.ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::DegenerateRow("perplexity over zero live steps".into()));
    }
    Ok(PerplexityResult {
        value: (total / count as f64).exp(),
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one() {
        let labels = [1.0, 0.0, 0.0, 1.0];
        let probs = [0.9, 0.1, 0.2, 0.8];
        let r = f1_multilabel(&probs, &labels, 2, 0.5).unwrap();
        assert_eq!(r.per_class, vec![1.0, 1.0]);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn all_negative_on_all_negative_is_zero_by_convention() {
        let labels = [0.0, 0.0, 0.0];
        let probs = [0.1, 0.2, 0.3];
        let r = f1_multilabel(&probs, &labels, 1, 0.5).unwrap();
        assert_eq!(r.macro_f1, 0.0);
    }

    // Frozen from the direct formula: P = R = 0.5 gives F1 = 0.5.
    #[test]
    fn half_right_scores_half() {
        let labels = [1.0, 0.0, 1.0, 0.0];
        let probs = [0.9, 0.9, 0.1, 0.1];
        let r = f1_multilabel(&probs, &labels, 1, 0.5).unwrap();
        assert_eq!(r.macro_f1, 0.5);
    }

    #[test]
    fn uniform_distribution_perplexity_is_vocab_size() {
        let vocab = 4;
        let probs = vec![0.25; 3 * vocab];
        let r = perplexity(&probs, vocab, &[0, 1, 2], &[true; 3]).unwrap();
        assert!((r.value - 4.0).abs() < 1e-12);
        assert_eq!(r.clamped, 0);
    }

    #[test]
    fn oracle_distribution_perplexity_is_one() {
        let probs = vec![1.0, 0.0, 0.0, 1.0];
        let r = perplexity(&probs, 2, &[0, 1], &[true, true]).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    // Frozen from direct arithmetic: exp(mean(ln 2, ln 8)) = 4.
    #[test]
    fn two_step_example() {
        let probs = vec![0.5, 0.5, 0.125, 0.875];
        let r = perplexity(&probs, 2, &[0, 0], &[true, true]).unwrap();
        assert!((r.value - 4.0).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn zero_probability_targets_clamp_with_counter() {
        let probs = vec![0.0, 1.0];
        let r = perplexity(&probs, 2, &[0], &[true]).unwrap();
        assert_eq!(r.clamped, 1);
        assert!(r.value > 1e10);
    }

    #[test]
    fn dead_rows_are_ignored() {
        let probs = vec![0.5, 0.5, 0.0, 1.0];
        let r = perplexity(&probs, 2, &[0, -1], &[true, false]).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
    }
}
