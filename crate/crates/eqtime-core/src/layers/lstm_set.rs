//! Order-invariant attention-LSTM pooling of an event set.
//!
//! The recurrence never reads events by position: each iteration scores
//! every event against the current query state, takes the softmax
//! readout r = sum_i a_i e_i, and feeds [q, r] back into the LSTM cell.
//! The final [q, r] is projected back to M dims.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamRef, ParamSet, Tape, TensorValue, ValueId};
use crate::error::{Error, Result};
use crate::nn::{xavier, LstmCell};

/// How many attention/LSTM iterations to run per set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IterationRule {
    /// As many iterations as live events (the switch-function reading).
    LiveCount,
    /// A fixed number regardless of set size.
    Fixed(usize),
}

#[derive(Debug, Clone)]
pub struct LstmSetConfig {
    pub m: usize,
    pub hidden: usize,
    pub attn_dim: usize,
    pub iterations: IterationRule,
    /// Fill value of the constant initial state q*_0.
    pub init_value: f64,
}

pub struct LstmSetLayer {
    cell: LstmCell,
    attn_w: ParamRef,
    attn_v: ParamRef,
    proj: ParamRef,
    /// Constant (non-trainable) initial state q*_0 of length H + M.
    init_state: ParamRef,
    m: usize,
    hidden: usize,
    iterations: IterationRule,
}

impl LstmSetLayer {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        cfg: &LstmSetConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if let IterationRule::Fixed(0) = cfg.iterations {
            return Err(Error::Config("lstm-set needs at least one iteration".into()));
        }
        let (m, h, a) = (cfg.m, cfg.hidden, cfg.attn_dim);
        let cell = LstmCell::new(ps, &format!("{prefix}.cell"), h + m, h, rng)?;
        let attn_w = ps.push(format!("{prefix}.attn_w"), xavier(rng, a, m + h), true)?;
        let attn_v = ps.push(format!("{prefix}.attn_v"), xavier(rng, a, 1), true)?;
        let proj = ps.push(format!("{prefix}.proj"), xavier(rng, m, h + m), true)?;
        let init_state = ps.push(
            format!("{prefix}.init_state"),
            TensorValue::filled(vec![1, h + m], cfg.init_value),
            false,
        )?;
        Ok(LstmSetLayer {
            cell,
            attn_w,
            attn_v,
            proj,
            init_state,
            m,
            hidden: h,
            iterations: cfg.iterations,
        })
    }

    /// Pool live events `[n, M]` (n >= 2) into `[M]`.
    pub fn forward_step(&self, tape: &mut Tape, ps: &ParamSet, events: ValueId) -> Result<ValueId> {
        let n = tape.shape(events)[0];
        let iters = match self.iterations {
            IterationRule::LiveCount => n,
            IterationRule::Fixed(k) => k,
        };
        let attn_w = tape.param(ps, self.attn_w);
        let attn_v = tape.param(ps, self.attn_v);

        let mut qstar = tape.param(ps, self.init_state); // [1, H+M]
        let mut h = tape.zeros(vec![1, self.hidden]);
        let mut c = tape.zeros(vec![1, self.hidden]);
        for _ in 0..iters {
            let (h_next, c_next) = self.cell.step(tape, ps, qstar, h, c)?;
            h = h_next;
            c = c_next;
            // d_i = V . tanh(W [e_i, q])
            let q_flat = tape.reshape(h, vec![self.hidden])?;
            let q_tiled = tape.broadcast(q_flat, vec![n, self.hidden])?;
            let cat = tape.concat(&[events, q_tiled], 1)?;
            let pre = tape.matmul_t(cat, attn_w, false, true)?;
            let act = tape.tanh(pre);
            let scores = tape.matmul(act, attn_v)?;
            let scores = tape.reshape(scores, vec![n])?;
            let attn = tape.softmax(scores)?;
            // r = sum_i a_i e_i
            let attn_row = tape.reshape(attn, vec![1, n])?;
            let readout = tape.matmul(attn_row, events)?;
            qstar = tape.concat(&[h, readout], 1)?;
        }
        let proj = tape.param(ps, self.proj);
        let out = tape.matmul_t(qstar, proj, false, true)?;
        tape.reshape(out, vec![self.m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use rand::Rng;
    use rand::SeedableRng;

    fn make_layer(seed: u64, iterations: IterationRule) -> (ParamSet, LstmSetLayer) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let layer = LstmSetLayer::new(
            &mut ps,
            "et",
            &LstmSetConfig {
                m: 3,
                hidden: 4,
                attn_dim: 5,
                iterations,
                init_value: 0.0,
            },
            &mut rng,
        )
        .unwrap();
        (ps, layer)
    }

    fn run(layer: &LstmSetLayer, ps: &ParamSet, rows: &[Vec<f64>]) -> Vec<f64> {
        let mut tape = Tape::new();
        let e = tape.constant(TensorValue::matrix(&rows.to_vec()).unwrap());
        let out = layer.forward_step(&mut tape, ps, e).unwrap();
        tape.value(out).data().to_vec()
    }

    // With identical events the readout r equals the event at every
    // iteration, so sets {e,e} and {e,e,e} are indistinguishable when
    // the iteration count is fixed.
    #[test]
    fn identical_events_collapse_to_one_readout() {
        let (ps, layer) = make_layer(11, IterationRule::Fixed(2));
        let e = vec![0.4, -0.2, 0.7];
        let two = run(&layer, &ps, &[e.clone(), e.clone()]);
        let three = run(&layer, &ps, &[e.clone(), e.clone(), e]);
        for (a, b) in two.iter().zip(&three) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn permutation_invariant_within_tolerance() {
        let (ps, layer) = make_layer(12, IterationRule::LiveCount);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let base = run(&layer, &ps, &rows);
            let mut perm = rows.clone();
            perm.swap(0, 3);
            perm.swap(1, 2);
            let swapped = run(&layer, &ps, &perm);
            for (a, b) in base.iter().zip(&swapped) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gradcheck_through_the_recurrence() {
        let (mut ps, layer) = make_layer(13, IterationRule::LiveCount);
        let rows = TensorValue::matrix(&[
            vec![0.2, -0.4, 0.1],
            vec![-0.3, 0.5, 0.6],
            vec![0.9, 0.0, -0.8],
        ])
        .unwrap();
        let report = check_gradients(
            &mut ps,
            |tape, ps| {
                let e = tape.constant(rows.clone());
                let out = layer.forward_step(tape, ps, e)?;
                tape.reduce_sum(out, 0, None)
            },
            1e-5,
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }
}
