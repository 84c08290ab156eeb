//! Equal-time layers: pool each time step's unordered event set into a
//! single M-dimensional representation.
//!
//! Steps with exactly one event bypass every layer and pass the event
//! through unchanged. Padded events never enter the computation: the
//! batch driver compacts each step down to its live events, so padding
//! invariance holds exactly rather than approximately.

mod batch;
mod lstm_set;
mod set_attention;

pub use batch::EqualTimeBatch;
pub use lstm_set::{IterationRule, LstmSetConfig, LstmSetLayer};
pub use set_attention::{PoolKind, SetAttentionConfig, SetTransformerLayer};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamRef, ParamSet, Tape, TensorValue, ValueId};
use crate::error::{Error, Result};
use crate::nn::xavier;
use crate::transition::TransitionMatrix;

/// How per-event input vectors are produced from the batch.
#[derive(Debug, Clone)]
pub enum InputEncoder {
    /// Use the feature columns as given.
    Features,
    /// Look rows up in a trainable type-embedding table `[K, M]`;
    /// feature columns are ignored.
    TypeEmbedding(ParamRef),
}

/// Deep-set pooling: apply one shared dense map and average.
#[derive(Debug, Clone)]
pub struct DeepSetLayer {
    pub w: ParamRef,
}

impl DeepSetLayer {
    pub fn new(ps: &mut ParamSet, prefix: &str, m: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let w = ps.push(format!("{prefix}.w"), xavier(rng, m, m), true)?;
        Ok(DeepSetLayer { w })
    }
}

/// One equal-time representation model.
pub enum EqualTimeLayer {
    Average,
    DeepSet(DeepSetLayer),
    LstmSet(LstmSetLayer),
    SetTransformer(SetTransformerLayer),
    /// Set transformer whose attention weights carry an additive
    /// transition-probability term.
    SetTransformerTransition(SetTransformerLayer),
}

impl EqualTimeLayer {
    /// Pool one step's live events `[n, M]` (n >= 2; singletons are
    /// bypassed by the driver) into `[M]`.
    pub fn forward_step(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        events: ValueId,
        types: &[usize],
        transition: Option<&TransitionMatrix>,
    ) -> Result<ValueId> {
        match self {
            EqualTimeLayer::Average => tape.reduce_mean(events, 0, None),
            EqualTimeLayer::DeepSet(layer) => {
                let w = tape.param(ps, layer.w);
                let mapped = tape.matmul_t(events, w, false, true)?;
                tape.reduce_mean(mapped, 0, None)
            }
            EqualTimeLayer::LstmSet(layer) => layer.forward_step(tape, ps, events),
            EqualTimeLayer::SetTransformer(layer) => layer.forward_step(tape, ps, events, None),
            EqualTimeLayer::SetTransformerTransition(layer) => {
                let matrix = transition.ok_or_else(|| {
                    Error::Config("transition-biased layer needs a transition matrix".into())
                })?;
                let tmat = transition_constant(tape, matrix, types)?;
                layer.forward_step(tape, ps, events, Some(tmat))
            }
        }
    }

    pub fn uses_transition(&self) -> bool {
        matches!(self, EqualTimeLayer::SetTransformerTransition(_))
    }
}

/// Constant `[n, n]` tensor with entry (j, i) = P(type_j follows type_i):
/// query rows, key columns, transition read from key event to query event.
fn transition_constant(
    tape: &mut Tape,
    matrix: &TransitionMatrix,
    types: &[usize],
) -> Result<ValueId> {
    let n = types.len();
    let mut data = vec![0.0; n * n];
    for (j, &tj) in types.iter().enumerate() {
        for (i, &ti) in types.iter().enumerate() {
            data[j * n + i] = matrix.prob(ti, tj)?;
        }
    }
    Ok(tape.constant(TensorValue::new(vec![n, n], data)?))
}

/// Per-step outputs of the equal-time stage: one `[B, M]` value per time
/// step, padded steps holding exact zeros.
pub struct StepReps {
    pub per_step: Vec<ValueId>,
    pub batch_size: usize,
    pub t_len: usize,
    pub m: usize,
}

impl StepReps {
    /// Stack into `[B, T, M]` for sequence-level attention.
    pub fn stacked(&self, tape: &mut Tape) -> Result<ValueId> {
        let mut parts = Vec::with_capacity(self.per_step.len());
        for &step in &self.per_step {
            parts.push(tape.reshape(step, vec![self.batch_size, 1, self.m])?);
        }
        tape.concat(&parts, 1)
    }
}

/// Run the equal-time stage over a whole batch.
///
/// Every live step is compacted to its live events; singleton steps
/// bypass the layer and emit the event vector unchanged; padded steps
/// emit zeros.
pub fn forward_equal_time(
    layer: &EqualTimeLayer,
    tape: &mut Tape,
    ps: &ParamSet,
    batch: &EqualTimeBatch,
    encoder: &InputEncoder,
    transition: Option<&TransitionMatrix>,
) -> Result<StepReps> {
    let (b_size, t_len, _, feat_m) = batch.dims();
    let (table, m) = match encoder {
        InputEncoder::Features => (None, feat_m),
        InputEncoder::TypeEmbedding(r) => {
            let dim = ps.get(*r).value.shape()[1];
            (Some(tape.param(ps, *r)), dim)
        }
    };

    let mut per_step = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut rows = Vec::with_capacity(b_size);
        for b in 0..b_size {
            if !batch.step_live(b, t) {
                rows.push(tape.zeros(vec![1, m]));
                continue;
            }
            let live = batch.live_events(b, t);
            let types: Vec<usize> = live
                .iter()
                .map(|&j| batch.event_type(b, t, j) as usize)
                .collect();
            let events = match (table, encoder) {
                (Some(table_id), InputEncoder::TypeEmbedding(_)) => {
                    tape.gather_rows(table_id, &types)?
                }
                _ => {
                    let mut data = Vec::with_capacity(live.len() * m);
                    for &j in &live {
                        data.extend_from_slice(batch.event_features(b, t, j));
                    }
                    tape.constant(TensorValue::new(vec![live.len(), m], data)?)
                }
            };
            let rep = if live.len() == 1 {
                // singleton bypass: the event passes through unchanged
                events
            } else {
                let pooled = layer.forward_step(tape, ps, events, &types, transition)?;
                tape.reshape(pooled, vec![1, m])?
            };
            rows.push(rep);
        }
        let step = if rows.len() == 1 {
            rows[0]
        } else {
            tape.concat(&rows, 0)?
        };
        per_step.push(step);
    }
    Ok(StepReps {
        per_step,
        batch_size: b_size,
        t_len,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transition::TypeVocab;
    use rand::SeedableRng;

    fn batch_from_sets(sets: Vec<Vec<Vec<f64>>>, m: usize) -> EqualTimeBatch {
        // one sequence, T = sets.len(), N = max set size
        let t_len = sets.len();
        let n = sets.iter().map(|s| s.len()).max().unwrap();
        let mut events = vec![0.0; t_len * n * m];
        let mut event_mask = vec![false; t_len * n];
        let mut type_ids = vec![-1i64; t_len * n];
        for (t, set) in sets.iter().enumerate() {
            for (j, ev) in set.iter().enumerate() {
                events[(t * n + j) * m..(t * n + j + 1) * m].copy_from_slice(ev);
                event_mask[t * n + j] = true;
                type_ids[t * n + j] = j as i64 % 2;
            }
        }
        EqualTimeBatch::new(
            TensorValue::new(vec![1, t_len, n, m], events).unwrap(),
            event_mask,
            vec![true; t_len],
            type_ids,
        )
        .unwrap()
    }

    fn run_layer(layer: &EqualTimeLayer, ps: &ParamSet, batch: &EqualTimeBatch) -> Vec<Vec<f64>> {
        let mut tape = Tape::new();
        let reps = forward_equal_time(layer, &mut tape, ps, batch, &InputEncoder::Features, None)
            .unwrap();
        reps.per_step
            .iter()
            .map(|&id| tape.value(id).data().to_vec())
            .collect()
    }

    #[test]
    fn average_layer_means_live_events() {
        let batch = batch_from_sets(vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]], 2);
        let out = run_layer(&EqualTimeLayer::Average, &ParamSet::new(), &batch);
        assert_eq!(out[0], vec![0.5, 0.5]);
    }

    #[test]
    fn singleton_bypass_is_exact() {
        let batch = batch_from_sets(vec![vec![vec![7.0, -2.0]]], 2);
        for layer in [EqualTimeLayer::Average] {
            let out = run_layer(&layer, &ParamSet::new(), &batch);
            assert_eq!(out[0], vec![7.0, -2.0]);
        }
        // deep set with random weights must also bypass exactly
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps = ParamSet::new();
        let ds = DeepSetLayer::new(&mut ps, "et", 2, &mut rng).unwrap();
        let out = run_layer(&EqualTimeLayer::DeepSet(ds), &ps, &batch);
        assert_eq!(out[0], vec![7.0, -2.0]);
    }

    #[test]
    fn padding_never_reaches_outputs() {
        // {(1,0),(0,1)} with a padded third slot: mean ignores padding
        let mut events = vec![1.0, 0.0, 0.0, 1.0, 55.0, 55.0];
        let batch = EqualTimeBatch::new(
            TensorValue::new(vec![1, 1, 3, 2], std::mem::take(&mut events)).unwrap(),
            vec![true, true, false],
            vec![true],
            vec![0, 1, -1],
        )
        .unwrap();
        let out = run_layer(&EqualTimeLayer::Average, &ParamSet::new(), &batch);
        assert_eq!(out[0], vec![0.5, 0.5]);
    }

    #[test]
    fn deep_set_identity_weights_reduce_to_mean() {
        let mut ps = ParamSet::new();
        let w = ps
            .push(
                "et.w",
                TensorValue::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
                true,
            )
            .unwrap();
        let layer = EqualTimeLayer::DeepSet(DeepSetLayer { w });
        let batch = batch_from_sets(vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]], 2);
        let out = run_layer(&layer, &ps, &batch);
        assert_eq!(out[0], vec![0.5, 0.5]);
    }

    #[test]
    fn deep_set_scaled_identity_doubles_mean() {
        let mut ps = ParamSet::new();
        let w = ps
            .push(
                "et.w",
                TensorValue::matrix(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap(),
                true,
            )
            .unwrap();
        let layer = EqualTimeLayer::DeepSet(DeepSetLayer { w });
        let batch = batch_from_sets(vec![vec![vec![1.0, 1.0], vec![3.0, 1.0]]], 2);
        let out = run_layer(&layer, &ps, &batch);
        assert_eq!(out[0], vec![4.0, 2.0]);
    }

    #[test]
    fn deep_set_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        let layer = EqualTimeLayer::DeepSet(DeepSetLayer::new(&mut ps, "et", 3, &mut rng).unwrap());
        let a = vec![0.3, -0.1, 0.9];
        let b = vec![-0.5, 0.2, 0.4];
        let c = vec![0.8, 0.8, -0.7];
        let fwd = run_layer(&layer, &ps, &batch_from_sets(vec![vec![a.clone(), b.clone(), c.clone()]], 3));
        let rev = run_layer(&layer, &ps, &batch_from_sets(vec![vec![c, a, b]], 3));
        for (x, y) in fwd[0].iter().zip(&rev[0]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_constant_orientation() {
        // key event i of type ti, query event j of type tj: entry (j,i)
        // is P(tj follows ti)
        let vocab = TypeVocab::from_names(vec!["a".into(), "b".into()]).unwrap();
        let k = vocab.total_types();
        let mut probs = vec![0.0; k * k];
        // P(b | a) = 0.9, P(a | a) = 0.1, rest uniform-ish
        probs[0 * k + 0] = 0.1;
        probs[0 * k + 1] = 0.9;
        for j in 0..k {
            probs[1 * k + j] = 1.0 / k as f64;
            probs[2 * k + j] = 1.0 / k as f64;
        }
        let m = TransitionMatrix::from_probs(probs, vocab).unwrap();
        let mut tape = Tape::new();
        let tmat = transition_constant(&mut tape, &m, &[0, 1]).unwrap();
        // query j=1 (type b), key i=0 (type a): P(b follows a) = 0.9
        assert_eq!(tape.value(tmat).data()[1 * 2 + 0], 0.9);
        // query j=0 (type a), key i=0 (type a): 0.1
        assert_eq!(tape.value(tmat).data()[0], 0.1);
    }

    #[test]
    fn unknown_type_id_is_rejected() {
        let vocab = TypeVocab::from_names(vec!["a".into()]).unwrap();
        let k = vocab.total_types();
        let m = TransitionMatrix::from_probs(vec![1.0 / k as f64; k * k], vocab).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(
            transition_constant(&mut tape, &m, &[0, 99]),
            Err(Error::UnknownType(_))
        ));
    }
}
