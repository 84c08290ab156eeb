//! Ingestion, binning, labeling, batching, and synthetic data.

mod binning;
mod jsonl;
mod labels;
mod batching;
mod synthetic;

pub use binning::bin_event_stream;
pub use jsonl::{load_jsonl_dataset, save_jsonl_dataset};
pub use labels::{threshold_labels, LabelStats, SplitKind};
pub use batching::{bucket_batches, BatchTargets, Minibatch};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset, SyntheticTask};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One timestamped reading: a type label plus an M-dimensional feature
/// vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub timestamp: f64,
    pub type_label: String,
    pub features: Vec<f64>,
}

/// The set of events sharing one time step (1 <= n <= N).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStep {
    pub events: Vec<EventRecord>,
}

/// Task-dependent training target for a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// One binary label per class.
    MultiLabel(Vec<u8>),
    /// One token id per time step; negative ids mark steps without a
    /// target.
    Tokens(Vec<i64>),
}

/// A sequence of time steps, each holding an unordered set of events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartiallyOrderedSequence {
    pub seq_id: String,
    pub steps: Vec<TimeStep>,
    pub target: Target,
}

impl PartiallyOrderedSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn max_events_per_step(&self) -> usize {
        self.steps.iter().map(|s| s.events.len()).max().unwrap_or(0)
    }
}

/// Per-file schema: feature dimension plus the task shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none", default)]
    pub classes: Option<usize>,
    #[serde(rename = "vocab", skip_serializing_if = "Option::is_none", default)]
    pub vocab_size: Option<usize>,
}

impl DatasetSchema {
    pub fn multilabel(m: usize, classes: usize) -> Self {
        DatasetSchema {
            m,
            classes: Some(classes),
            vocab_size: None,
        }
    }

    pub fn next_token(m: usize, vocab: usize) -> Self {
        DatasetSchema {
            m,
            classes: None,
            vocab_size: Some(vocab),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("schema: M must be positive".into()));
        }
        match (self.classes, self.vocab_size) {
            (Some(c), None) if c >= 1 => Ok(()),
            (None, Some(v)) if v >= 2 => Ok(()),
            _ => Err(Error::Config(
                "schema needs either C >= 1 or vocab >= 2, but not both".into(),
            )),
        }
    }
}

/// Train/validation/test partition; a pure function of (data, seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<PartiallyOrderedSequence>,
    pub validation: Vec<PartiallyOrderedSequence>,
    pub test: Vec<PartiallyOrderedSequence>,
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Seeded shuffle, then partition by fractions (which must sum to 1).
pub fn split_dataset(
    mut seqs: Vec<PartiallyOrderedSequence>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let (ftr, fva, fte) = fractions;
    if ftr <= 0.0 || fva < 0.0 || fte < 0.0 || (ftr + fva + fte - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    seqs.shuffle(&mut rng);
    let n = seqs.len();
    let n_train = (n as f64 * ftr).round() as usize;
    let n_val = (n as f64 * fva).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    let test = seqs.split_off(n_train + n_val);
    let validation = seqs.split_off(n_train);
    Ok(DatasetSplit {
        train: seqs,
        validation,
        test,
        fractions,
        seed,
    })
}

/// Mix a stream index into a base seed (splitmix64 finalizer), so each
/// work item gets an independent deterministic RNG stream.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy(n: usize) -> Vec<PartiallyOrderedSequence> {
        (0..n)
            .map(|i| PartiallyOrderedSequence {
                seq_id: format!("s{i}"),
                steps: vec![TimeStep {
                    events: vec![EventRecord {
                        timestamp: 0.0,
                        type_label: "A".into(),
                        features: vec![0.0],
                    }],
                }],
                target: Target::MultiLabel(vec![0]),
            })
            .collect()
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let a = split_dataset(dummy(100), (0.7, 0.15, 0.15), 42).unwrap();
        let b = split_dataset(dummy(100), (0.7, 0.15, 0.15), 42).unwrap();
        assert_eq!(a.train.len(), 70);
        assert_eq!(a.validation.len(), 15);
        assert_eq!(a.test.len(), 15);
        let ids =
            |v: &[PartiallyOrderedSequence]| v.iter().map(|s| s.seq_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.test), ids(&b.test));
        let mut all = ids(&a.train);
        all.extend(ids(&a.validation));
        all.extend(ids(&a.test));
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(split_dataset(dummy(4), (0.5, 0.2, 0.2), 1).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let s = derive_seed(7, 0);
        let t = derive_seed(7, 1);
        assert_ne!(s, t);
        assert_eq!(s, derive_seed(7, 0));
    }
}
