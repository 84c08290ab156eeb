//! Length-bucketed batching with event padding and masks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::autodiff::TensorValue;
use crate::data::{DatasetSchema, PartiallyOrderedSequence, Target};
use crate::error::{Error, Result};
use crate::layers::EqualTimeBatch;
use crate::transition::TypeVocab;

/// Task targets aligned with one batch.
#[derive(Debug, Clone)]
pub enum BatchTargets {
    /// Row-major `[B, C]` binary labels as reals.
    MultiLabel { labels: Vec<f64>, classes: usize },
    /// Row-major `[B, T]` token ids; negative marks steps without a
    /// target.
    Tokens { ids: Vec<i64> },
}

/// One training/evaluation batch: dense events plus targets.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub batch: EqualTimeBatch,
    pub targets: BatchTargets,
    pub seq_ids: Vec<String>,
}

/// Group sequences by exact length, then cut seeded-shuffled batches
/// within each group. Iteration order is a pure function of the seed.
pub fn bucket_batches(
    seqs: &[PartiallyOrderedSequence],
    schema: &DatasetSchema,
    vocab: &TypeVocab,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Minibatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    schema.validate()?;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in seqs.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::Contract(format!("sequence {} has no steps", s.seq_id)));
        }
        groups.entry(s.len()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batches = Vec::new();
    for (_len, mut idxs) in groups {
        idxs.shuffle(&mut rng);
        for chunk in idxs.chunks(batch_size) {
            let members: Vec<&PartiallyOrderedSequence> = chunk.iter().map(|&i| &seqs[i]).collect();
            batches.push(build_minibatch(&members, schema, vocab)?);
        }
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}

/// Assemble one dense batch from same-length sequences.
pub fn build_minibatch(
    seqs: &[&PartiallyOrderedSequence],
    schema: &DatasetSchema,
    vocab: &TypeVocab,
) -> Result<Minibatch> {
    let b = seqs.len();
    let t_len = seqs[0].len();
    if seqs.iter().any(|s| s.len() != t_len) {
        return Err(Error::Contract("batch members must share one length".into()));
    }
    let n = seqs
        .iter()
        .map(|s| s.max_events_per_step())
        .max()
        .unwrap_or(1);
    let m = schema.m;

    let mut events = vec![0.0; b * t_len * n * m];
    let mut event_mask = vec![false; b * t_len * n];
    let mut type_ids = vec![-1i64; b * t_len * n];
    for (bi, seq) in seqs.iter().enumerate() {
        for (ti, step) in seq.steps.iter().enumerate() {
            for (j, ev) in step.events.iter().enumerate() {
                if ev.features.len() != m {
                    return Err(Error::Contract(format!(
                        "sequence {}: event feature arity {} != M={m}",
                        seq.seq_id,
                        ev.features.len()
                    )));
                }
                let slot = (bi * t_len + ti) * n + j;
                events[slot * m..(slot + 1) * m].copy_from_slice(&ev.features);
                event_mask[slot] = true;
                type_ids[slot] = vocab.id_of(&ev.type_label) as i64;
            }
        }
    }
    let batch = EqualTimeBatch::new(
        TensorValue::new(vec![b, t_len, n, m], events)?,
        event_mask,
        vec![true; b * t_len],
        type_ids,
    )?;

    let targets = match (schema.classes, schema.vocab_size) {
        (Some(c), None) => {
            let mut labels = Vec::with_capacity(b * c);
            for seq in seqs {
                match &seq.target {
                    Target::MultiLabel(l) if l.len() == c => {
                        labels.extend(l.iter().map(|&v| f64::from(v)));
                    }
                    Target::MultiLabel(l) => {
                        return Err(Error::Contract(format!(
                            "sequence {}: {} labels for {c} classes",
                            seq.seq_id,
                            l.len()
                        )));
                    }
                    Target::Tokens(_) => {
                        return Err(Error::Contract(format!(
                            "sequence {}: token targets in a multilabel dataset",
                            seq.seq_id
                        )));
                    }
                }
            }
            BatchTargets::MultiLabel { labels, classes: c }
        }
        (None, Some(v)) => {
            let mut ids = Vec::with_capacity(b * t_len);
            for seq in seqs {
                match &seq.target {
                    Target::Tokens(tk) if tk.len() == t_len => {
                        if let Some(&bad) = tk.iter().find(|&&t| t >= v as i64) {
                            return Err(Error::Contract(format!(
                                "sequence {}: token {bad} outside vocab {v}",
                                seq.seq_id
                            )));
                        }
                        ids.extend_from_slice(tk);
                    }
                    Target::Tokens(tk) => {
                        return Err(Error::Contract(format!(
                            "sequence {}: {} tokens for {t_len} steps",
                            seq.seq_id,
                            tk.len()
                        )));
                    }
                    Target::MultiLabel(_) => {
                        return Err(Error::Contract(format!(
                            "sequence {}: multilabel target in a next-token dataset",
                            seq.seq_id
                        )));
                    }
                }
            }
            BatchTargets::Tokens { ids }
        }
        _ => return Err(Error::Config("schema must pick exactly one task".into())),
    };

    Ok(Minibatch {
        batch,
        targets,
        seq_ids: seqs.iter().map(|s| s.seq_id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EventRecord, TimeStep};

    fn seq(id: &str, lens: &[usize]) -> PartiallyOrderedSequence {
        let steps = lens
            .iter()
            .map(|&k| TimeStep {
                events: (0..k)
                    .map(|j| EventRecord {
                        timestamp: 0.0,
                        type_label: format!("t{j}"),
                        features: vec![j as f64, 1.0],
                    })
                    .collect(),
            })
            .collect();
        PartiallyOrderedSequence {
            seq_id: id.into(),
            steps,
            target: Target::MultiLabel(vec![0, 1]),
        }
    }

    fn vocab() -> TypeVocab {
        TypeVocab::from_names(vec!["t0".into(), "t1".into(), "t2".into(), "t3".into()]).unwrap()
    }

    #[test]
    fn groups_by_exact_length() {
        let seqs = vec![seq("a", &[1, 1, 1]), seq("b", &[1, 1, 1]), seq("c", &[1; 5])];
        let schema = DatasetSchema::multilabel(2, 2);
        let batches = bucket_batches(&seqs, &schema, &vocab(), 2, 1).unwrap();
        assert_eq!(batches.len(), 2);
        let mut sizes: Vec<usize> = batches.iter().map(|b| b.seq_ids.len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 2]);
        for b in &batches {
            let (bs, t, _, _) = b.batch.dims();
            if b.seq_ids.contains(&"c".to_string()) {
                assert_eq!((bs, t), (1, 5));
            } else {
                assert_eq!((bs, t), (2, 3));
            }
        }
    }

    #[test]
    fn events_pad_to_batch_max_with_mask() {
        let seqs = vec![seq("a", &[2]), seq("b", &[4])];
        let schema = DatasetSchema::multilabel(2, 2);
        let batches = bucket_batches(&seqs, &schema, &vocab(), 2, 3).unwrap();
        assert_eq!(batches.len(), 1);
        let (_, _, n, _) = batches[0].batch.dims();
        assert_eq!(n, 4);
        let hist = batches[0].batch.cooccurrence_histogram();
        assert_eq!(hist, vec![0, 1, 0, 1]);
    }

    #[test]
    fn same_seed_same_order() {
        let seqs: Vec<_> = (0..10)
            .map(|i| seq(&format!("s{i}"), &vec![1; 1 + i % 3]))
            .collect();
        let schema = DatasetSchema::multilabel(2, 2);
        let a = bucket_batches(&seqs, &schema, &vocab(), 3, 7).unwrap();
        let b = bucket_batches(&seqs, &schema, &vocab(), 3, 7).unwrap();
        let ids = |bs: &[Minibatch]| {
            bs.iter()
                .flat_map(|x| x.seq_ids.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&a), ids(&b));
        let c = bucket_batches(&seqs, &schema, &vocab(), 3, 8).unwrap();
        assert_ne!(ids(&a), ids(&c));
    }

    #[test]
    fn wrong_label_arity_rejected() {
        let mut s = seq("a", &[1]);
        s.target = Target::MultiLabel(vec![1]);
        let schema = DatasetSchema::multilabel(2, 2);
        assert!(bucket_batches(&[s], &schema, &vocab(), 1, 0).is_err());
    }
}
