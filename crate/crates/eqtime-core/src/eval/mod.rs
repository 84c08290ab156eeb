//! Metrics, seed-replicated comparisons, and ensembling.

mod metrics;
mod stats;

pub use metrics::{f1_multilabel, perplexity, F1Result, PerplexityResult};
pub use stats::{compare_metrics, compare_runs, Comparison};

use crate::autodiff::TensorValue;
use crate::data::{bucket_batches, BatchTargets, DatasetSchema, Minibatch, PartiallyOrderedSequence};
use crate::error::{Error, Result};
use crate::model::{Model, TaskSpec};
use crate::parallel::maybe_par_map;
use crate::transition::TypeVocab;

/// Decision threshold used everywhere a probability becomes a label.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Batched predictions of one frozen model (fan-out across batches).
fn predict_batches(model: &Model, batches: &[Minibatch]) -> Result<Vec<TensorValue>> {
    let outs = maybe_par_map(batches, |mb| model.predict_probs(&mb.batch));
    outs.into_iter().collect()
}

/// Macro-F1 of a model over a sequence set (multilabel tasks).
pub fn evaluate_macro_f1(
    model: &Model,
    seqs: &[PartiallyOrderedSequence],
    schema: &DatasetSchema,
    vocab: &TypeVocab,
    batch_size: usize,
) -> Result<F1Result> {
    let TaskSpec::MultiLabel { classes } = model.spec.task else {
        return Err(Error::Config("macro-F1 needs a multilabel model".into()));
    };
    let batches = bucket_batches(seqs, schema, vocab, batch_size, 0)?;
    let probs = predict_batches(model, &batches)?;
    let mut all_probs = Vec::new();
    let mut all_labels = Vec::new();
    for (mb, p) in batches.iter().zip(&probs) {
        let BatchTargets::MultiLabel { labels, .. } = &mb.targets else {
            return Err(Error::Config("expected multilabel targets".into()));
        };
        all_probs.extend_from_slice(p.data());
        all_labels.extend_from_slice(labels);
    }
    f1_multilabel(&all_probs, &all_labels, classes, DECISION_THRESHOLD)
}

/// Test perplexity of a model over a sequence set (next-token tasks).
pub fn evaluate_perplexity(
    model: &Model,
    seqs: &[PartiallyOrderedSequence],
    schema: &DatasetSchema,
    vocab: &TypeVocab,
    batch_size: usize,
) -> Result<PerplexityResult> {
    let TaskSpec::NextToken { vocab: v } = model.spec.task else {
        return Err(Error::Config("perplexity needs a next-token model".into()));
    };
    let batches = bucket_batches(seqs, schema, vocab, batch_size, 0)?;
    let probs = predict_batches(model, &batches)?;
    let mut flat_probs = Vec::new();
    let mut targets = Vec::new();
    let mut live = Vec::new();
    for (mb, p) in batches.iter().zip(&probs) {
        let BatchTargets::Tokens { ids } = &mb.targets else {
            return Err(Error::Config("expected token targets".into()));
        };
        let (b, t, _, _) = mb.batch.dims();
        flat_probs.extend_from_slice(p.data());
        targets.extend_from_slice(ids);
        for i in 0..b * t {
            live.push(mb.batch.step_mask()[i] && ids[i] >= 0);
        }
    }
    perplexity(&flat_probs, v, &targets, &live)
}

/// Unweighted mean of member probabilities. All members must share the
/// task head.
pub fn ensemble_predict(models: &[&Model], batch: &crate::layers::EqualTimeBatch) -> Result<TensorValue> {
    let first = models
        .first()
        .ok_or_else(|| Error::Config("empty ensemble".into()))?;
    for m in models {
        if m.spec.task != first.spec.task {
            return Err(Error::Config(format!(
                "ensemble members disagree on task head: {:?} vs {:?}",
                m.spec.task, first.spec.task
            )));
        }
    }
    let preds = maybe_par_map(models, |m| m.predict_probs(batch));
    let mut acc: Option<TensorValue> = None;
    for p in preds {
        let p = p?;
        acc = Some(match acc {
            None => p,
            Some(mut a) => {
                if a.shape() != p.shape() {
                    return Err(Error::Config("ensemble members disagree on output shape".into()));
                }
                for (x, y) in a.data_mut().iter_mut().zip(p.data()) {
                    *x += y;
                }
                a
            }
        });
    }
    let mut out = acc.unwrap();
    let n = models.len() as f64;
    out.data_mut().iter_mut().for_each(|v| *v /= n);
    Ok(out)
}
