//! Event-type transition probabilities estimated from the ordered part
//! of a corpus.
//!
//! Only adjacent pairs of singleton time steps contribute counts:
//! transitions into or out of a multi-event step are excluded because
//! their internal order is unknown. Probabilities derive from counts by
//! additive smoothing; a zero-count row with zero smoothing falls back
//! to uniform.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

use crate::data::PartiallyOrderedSequence;
use crate::error::{Error, Result};
use crate::persist;

const FORMAT: &str = "transition-matrix";
const VERSION: u32 = 1;

/// Bijection between event-type labels and dense ids. Ids follow sorted
/// label order; one reserved trailing id maps every unseen label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeVocab {
    names: Vec<String>,
}

impl TypeVocab {
    /// Vocabulary over the sorted unique labels in the training split.
    pub fn fit(train: &[PartiallyOrderedSequence]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for seq in train {
            for step in &seq.steps {
                for ev in &step.events {
                    set.insert(ev.type_label.clone());
                }
            }
        }
        if set.is_empty() {
            return Err(Error::Estimation("no event types in training data".into()));
        }
        Ok(TypeVocab {
            names: set.into_iter().collect(),
        })
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Estimation("empty type vocabulary".into()));
        }
        Ok(TypeVocab { names })
    }

    /// Known types plus the reserved unknown slot.
    pub fn total_types(&self) -> usize {
        self.names.len() + 1
    }

    pub fn unknown_id(&self) -> usize {
        self.names.len()
    }

    /// Dense id for a label; unseen labels map to the reserved slot.
    pub fn id_of(&self, label: &str) -> usize {
        self.names
            .binary_search_by(|n| n.as_str().cmp(label))
            .unwrap_or(self.names.len())
    }

    pub fn label_of(&self, id: usize) -> &str {
        if id < self.names.len() {
            &self.names[id]
        } else {
            "<unk>"
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Row-stochastic matrix of event-type transition probabilities, kept
/// alongside the raw counts it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    k: usize,
    counts: Vec<u64>,
    probs: Vec<f64>,
    alpha: f64,
    vocab: TypeVocab,
    /// True when `probs` derive from `counts` by the smoothing rule
    /// (estimated matrices); false for matrices given directly as
    /// probabilities.
    derived: bool,
}

impl TransitionMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vocab(&self) -> &TypeVocab {
        &self.vocab
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// P(type `to` follows type `from`).
    pub fn prob(&self, from: usize, to: usize) -> Result<f64> {
        if from >= self.k || to >= self.k {
            return Err(Error::UnknownType(format!(
                "type id {}/{} outside vocabulary of {} types",
                from, to, self.k
            )));
        }
        Ok(self.probs[from * self.k + to])
    }

    /// A matrix with explicit probabilities (tests and synthetic data).
    /// Rows are used as given; counts are left empty.
    pub fn from_probs(probs: Vec<f64>, vocab: TypeVocab) -> Result<Self> {
        let k = vocab.total_types();
        if probs.len() != k * k {
            return Err(Error::Dimension(format!(
                "expected {k}x{k} probabilities, got {}",
                probs.len()
            )));
        }
        Ok(TransitionMatrix {
            k,
            counts: vec![0; k * k],
            probs,
            alpha: 0.0,
            vocab,
            derived: false,
        })
    }

    fn probs_from_counts(counts: &[u64], k: usize, alpha: f64) -> Vec<f64> {
        let mut probs = vec![0.0; k * k];
        for i in 0..k {
            let row = &counts[i * k..(i + 1) * k];
            let total: u64 = row.iter().sum();
            if total == 0 && alpha == 0.0 {
                for j in 0..k {
                    probs[i * k + j] = 1.0 / k as f64;
                }
            } else {
                let denom = total as f64 + alpha * k as f64;
                for j in 0..k {
                    probs[i * k + j] = (row[j] as f64 + alpha) / denom;
                }
            }
        }
        probs
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save(path, FORMAT, VERSION, self)
    }

    /// Load and verify: for estimated matrices the probabilities are
    /// recomputed from the stored counts and must match bit-for-bit.
    pub fn load(path: &Path) -> Result<Self> {
        let m: TransitionMatrix = persist::load(path, FORMAT, VERSION)?;
        if m.derived {
            let recomputed = Self::probs_from_counts(&m.counts, m.k, m.alpha);
            if recomputed != m.probs {
                return Err(Error::Persistence(
                    "stored probabilities disagree with stored counts".into(),
                ));
            }
        }
        for i in 0..m.k {
            let s: f64 = m.probs[i * m.k..(i + 1) * m.k].iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Persistence(format!(
                    "row {i} sums to {s}, not stochastic"
                )));
            }
        }
        Ok(m)
    }
}

/// Count transitions across adjacent singleton-singleton step pairs in
/// the training split and smooth additively by `alpha`.
pub fn estimate_transition_matrix(
    train: &[PartiallyOrderedSequence],
    alpha: f64,
) -> Result<TransitionMatrix> {
    if train.is_empty() {
        return Err(Error::Estimation("empty training set".into()));
    }
    if alpha < 0.0 {
        return Err(Error::Estimation(format!("negative smoothing {alpha}")));
    }
    let vocab = TypeVocab::fit(train)?;
    estimate_with_vocab(train, alpha, vocab)
}

/// Same as [`estimate_transition_matrix`] with a caller-fixed vocabulary.
pub fn estimate_with_vocab(
    train: &[PartiallyOrderedSequence],
    alpha: f64,
    vocab: TypeVocab,
) -> Result<TransitionMatrix> {
    if train.is_empty() {
        return Err(Error::Estimation("empty training set".into()));
    }
    let k = vocab.total_types();
    let mut counts = vec![0u64; k * k];
    for seq in train {
        for pair in seq.steps.windows(2) {
            if pair[0].events.len() == 1 && pair[1].events.len() == 1 {
                let from = vocab.id_of(&pair[0].events[0].type_label);
                let to = vocab.id_of(&pair[1].events[0].type_label);
                counts[from * k + to] += 1;
            }
        }
    }
    let probs = TransitionMatrix::probs_from_counts(&counts, k, alpha);
    Ok(TransitionMatrix {
        k,
        counts,
        probs,
        alpha,
        vocab,
        derived: true,
    })
}
