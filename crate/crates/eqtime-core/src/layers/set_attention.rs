//! Set transformer over equal-time events: multi-head self-attention
//! without positional encoding, pooled order-free into one vector.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamRef, ParamSet, Tape, ValueId};
use crate::error::{Error, Result};
use crate::nn::{uniform_vec, AttnBlock, TransitionBiasRefs};

/// How the n per-event outputs collapse to a single representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    /// Mean over live per-event outputs.
    MaskedMean,
    /// Softmax attention against one trainable query vector.
    LearnedQuery,
}

#[derive(Debug, Clone)]
pub struct SetAttentionConfig {
    pub m: usize,
    pub heads: usize,
    pub depth: usize,
    pub ff_dim: usize,
    pub pool: PoolKind,
}

pub struct SetTransformerLayer {
    blocks: Vec<AttnBlock>,
    /// Per-block transition-bias parameters; present only for the
    /// transition-biased variant.
    bias: Option<Vec<TransitionBiasRefs>>,
    pool_query: Option<ParamRef>,
    pool: PoolKind,
    m: usize,
}

impl SetTransformerLayer {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        cfg: &SetAttentionConfig,
        with_transition_bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if cfg.heads == 0 || cfg.m % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "head count {} must divide feature dim {}",
                cfg.heads, cfg.m
            )));
        }
        if cfg.depth == 0 || cfg.depth > 2 {
            return Err(Error::Config(format!(
                "set transformer depth {} out of range 1..=2",
                cfg.depth
            )));
        }
        let d_h = cfg.m / cfg.heads;
        let mut blocks = Vec::with_capacity(cfg.depth);
        let mut bias_blocks = Vec::with_capacity(cfg.depth);
        for d in 0..cfg.depth {
            blocks.push(AttnBlock::new(
                ps,
                &format!("{prefix}.blk{d}"),
                cfg.m,
                cfg.heads,
                cfg.ff_dim,
                rng,
            )?);
            if with_transition_bias {
                bias_blocks.push(TransitionBiasRefs::new(
                    ps,
                    &format!("{prefix}.blk{d}.trans"),
                    cfg.heads,
                    d_h,
                    rng,
                )?);
            }
        }
        let pool_query = match cfg.pool {
            PoolKind::MaskedMean => None,
            PoolKind::LearnedQuery => Some(ps.push(
                format!("{prefix}.pool_q"),
                uniform_vec(rng, cfg.m, (1.0 / cfg.m as f64).sqrt()),
                true,
            )?),
        };
        Ok(SetTransformerLayer {
            blocks,
            bias: if with_transition_bias {
                Some(bias_blocks)
            } else {
                None
            },
            pool_query,
            pool: cfg.pool,
            m: cfg.m,
        })
    }

    /// Pool live events `[n, M]` (n >= 2) into `[M]`. `tmat` is the
    /// `[n, n]` transition-probability constant for the biased variant.
    pub fn forward_step(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        events: ValueId,
        tmat: Option<ValueId>,
    ) -> Result<ValueId> {
        if self.bias.is_some() && tmat.is_none() {
            return Err(Error::Config(
                "transition-biased set transformer called without probabilities".into(),
            ));
        }
        let mut x = events;
        for (bi, block) in self.blocks.iter().enumerate() {
            let transition = match (&self.bias, tmat) {
                (Some(bias_blocks), Some(t)) => Some((&bias_blocks[bi], t)),
                _ => None,
            };
            x = block.forward(tape, ps, x, None, transition, None)?;
        }
        match self.pool {
            PoolKind::MaskedMean => tape.reduce_mean(x, 0, None),
            PoolKind::LearnedQuery => {
                let n = tape.shape(x)[0];
                let q = tape.param(ps, self.pool_query.unwrap());
                let q_col = tape.reshape(q, vec![self.m, 1])?;
                let scores = tape.matmul(x, q_col)?;
                let scores = tape.scale(scores, 1.0 / (self.m as f64).sqrt());
                let scores = tape.reshape(scores, vec![n])?;
                let w = tape.softmax(scores)?;
                let w_row = tape.reshape(w, vec![1, n])?;
                let pooled = tape.matmul(w_row, x)?;
                tape.reshape(pooled, vec![self.m])
            }
        }
    }
}
