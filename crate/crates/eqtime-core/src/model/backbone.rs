//! Sequence backbones over the pooled representation sequence.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Tape, TensorValue, ValueId};
use crate::error::Result;
use crate::layers::{EqualTimeBatch, StepReps};
use crate::model::TaskSpec;
use crate::nn::{sinusoidal_encoding, AttnBlock, Dense, LstmCell};

/// LSTM over live steps with mask-gated state carry, so padded steps
/// pass the state through unchanged.
pub struct LstmBackbone {
    cell: LstmCell,
    head: Dense,
    hidden: usize,
}

impl LstmBackbone {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        head_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let cell = LstmCell::new(ps, &format!("{prefix}.cell"), input_dim, hidden, rng)?;
        let head = Dense::new(ps, &format!("{prefix}.head"), hidden, head_dim, rng)?;
        Ok(LstmBackbone { cell, head, hidden })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        reps: &StepReps,
        batch: &EqualTimeBatch,
        task: &TaskSpec,
    ) -> Result<ValueId> {
        let b = reps.batch_size;
        let t_len = reps.t_len;
        let h_dim = self.hidden;

        // last live step per sequence, for the sequence-to-one head
        let last_live: Vec<Option<usize>> = (0..b)
            .map(|bi| (0..t_len).rev().find(|&t| batch.step_live(bi, t)))
            .collect();

        let mut h = tape.zeros(vec![b, h_dim]);
        let mut c = tape.zeros(vec![b, h_dim]);
        let mut final_h: Option<ValueId> = None;
        let mut per_step_logits = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let x = reps.per_step[t];
            let (h_new, c_new) = self.cell.step(tape, ps, x, h, c)?;
            let live_col: Vec<f64> = (0..b)
                .map(|bi| if batch.step_live(bi, t) { 1.0 } else { 0.0 })
                .collect();
            if live_col.iter().all(|&v| v == 1.0) {
                h = h_new;
                c = c_new;
            } else {
                // state carry through padded steps
                let keep: Vec<f64> = live_col.iter().map(|v| 1.0 - v).collect();
                let live_m = tape.constant(col_mask(&live_col, h_dim));
                let keep_m = tape.constant(col_mask(&keep, h_dim));
                let hn = tape.mul(h_new, live_m)?;
                let hp = tape.mul(h, keep_m)?;
                h = tape.add(hn, hp)?;
                let cn = tape.mul(c_new, live_m)?;
                let cp = tape.mul(c, keep_m)?;
                c = tape.add(cn, cp)?;
            }
            match task {
                TaskSpec::MultiLabel { .. } => {
                    let pick: Vec<f64> = (0..b)
                        .map(|bi| if last_live[bi] == Some(t) { 1.0 } else { 0.0 })
                        .collect();
                    if pick.iter().any(|&v| v == 1.0) {
                        let pick_m = tape.constant(col_mask(&pick, h_dim));
                        let contrib = tape.mul(h, pick_m)?;
                        final_h = Some(match final_h {
                            Some(acc) => tape.add(acc, contrib)?,
                            None => contrib,
                        });
                    }
                }
                TaskSpec::NextToken { .. } => {
                    let logits_t = self.head.forward(tape, ps, h)?;
                    per_step_logits.push(tape.reshape(logits_t, vec![b, 1, self.head.out_dim])?);
                }
            }
        }
        match task {
            TaskSpec::MultiLabel { .. } => {
                let hf = final_h.unwrap_or_else(|| panic!("batch with no live steps"));
                self.head.forward(tape, ps, hf)
            }
            TaskSpec::NextToken { .. } => tape.concat(&per_step_logits, 1),
        }
    }
}

fn col_mask(col: &[f64], width: usize) -> TensorValue {
    let mut data = Vec::with_capacity(col.len() * width);
    for &v in col {
        data.extend(std::iter::repeat(v).take(width));
    }
    TensorValue::new(vec![col.len(), width], data).unwrap()
}

/// Transformer encoder over time steps with sinusoidal positions added
/// at the sequence level (never inside equal-time sets).
pub struct TransformerBackbone {
    proj: Option<Dense>,
    blocks: Vec<AttnBlock>,
    head: Dense,
    d: usize,
}

impl TransformerBackbone {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        d: usize,
        layers: usize,
        heads: usize,
        ff_dim: usize,
        head_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let proj = if input_dim != d {
            Some(Dense::new(ps, &format!("{prefix}.proj"), input_dim, d, rng)?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(layers);
        for l in 0..layers {
            blocks.push(AttnBlock::new(
                ps,
                &format!("{prefix}.blk{l}"),
                d,
                heads,
                ff_dim,
                rng,
            )?);
        }
        let head = Dense::new(ps, &format!("{prefix}.head"), d, head_dim, rng)?;
        Ok(TransformerBackbone {
            proj,
            blocks,
            head,
            d,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        reps: &StepReps,
        batch: &EqualTimeBatch,
        task: &TaskSpec,
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<ValueId> {
        let b = reps.batch_size;
        let t_len = reps.t_len;
        let mut x = reps.stacked(tape)?;
        if let Some(proj) = &self.proj {
            x = proj.forward(tape, ps, x)?;
        }
        let pe = tape.constant(sinusoidal_encoding(t_len, self.d));
        let pe = tape.broadcast(pe, vec![b, t_len, self.d])?;
        x = tape.add(x, pe)?;

        let causal = matches!(task, TaskSpec::NextToken { .. });
        let mask = attention_mask(batch, b, t_len, causal);
        for block in &self.blocks {
            let dr = dropout.as_mut().map(|(r, rng)| (*r, &mut **rng));
            x = block.forward(tape, ps, x, Some(&mask), None, dr)?;
        }
        match task {
            TaskSpec::MultiLabel { .. } => {
                let pooled = tape.reduce_mean(x, 1, Some(batch.step_mask()))?;
                self.head.forward(tape, ps, pooled)
            }
            TaskSpec::NextToken { .. } => self.head.forward(tape, ps, x),
        }
    }
}

/// Key mask for step-level attention: attend only to live steps, only
/// backwards in time when causal. Padded query rows attend to their own
/// diagonal so no softmax row is empty; their outputs are discarded by
/// the masked pool or the loss mask.
fn attention_mask(batch: &EqualTimeBatch, b: usize, t_len: usize, causal: bool) -> Vec<bool> {
    let mut mask = vec![false; b * t_len * t_len];
    for bi in 0..b {
        for q in 0..t_len {
            let row = (bi * t_len + q) * t_len;
            if !batch.step_live(bi, q) {
                mask[row + q] = true;
                continue;
            }
            for k in 0..t_len {
                if causal && k > q {
                    break;
                }
                mask[row + k] = batch.step_live(bi, k);
            }
        }
    }
    mask
}
