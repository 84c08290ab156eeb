//! Shared building blocks: initializers, dense layers, an LSTM cell,
//! and a transformer encoder block with optional score masking and
//! transition-probability bias.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamRef, ParamSet, Tape, TensorValue, ValueId};
use crate::error::Result;

/// Xavier/Glorot uniform init for a [rows, cols] weight.
pub fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TensorValue {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    TensorValue::new(vec![rows, cols], data).unwrap()
}

/// Uniform init for a vector parameter.
pub fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, limit: f64) -> TensorValue {
    let data = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
    TensorValue::new(vec![len], data).unwrap()
}

/// Dense layer y = x W^T + b with W stored as [out, in].
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamRef,
    pub b: ParamRef,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = ps.push(format!("{prefix}.w"), xavier(rng, out_dim, in_dim), true)?;
        let b = ps.push(format!("{prefix}.b"), TensorValue::zeros(vec![out_dim]), true)?;
        Ok(Dense { w, b, out_dim })
    }

    /// Input `[.., in]` to output `[.., out]`.
    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: ValueId) -> Result<ValueId> {
        let w = tape.param(ps, self.w);
        let y = tape.matmul_t(x, w, false, true)?;
        let b = tape.param(ps, self.b);
        let shape = tape.shape(y).to_vec();
        let b = tape.broadcast(b, shape)?;
        tape.add(y, b)
    }
}

/// Standard LSTM cell; weights are shared across time.
#[derive(Debug, Clone)]
pub struct LstmCell {
    wx: [ParamRef; 4],
    wh: [ParamRef; 4],
    bias: [ParamRef; 4],
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let gates = ["i", "f", "g", "o"];
        let mut wx = Vec::new();
        let mut wh = Vec::new();
        let mut bias = Vec::new();
        for gate in gates {
            wx.push(ps.push(
                format!("{prefix}.wx_{gate}"),
                xavier(rng, hidden, input_dim),
                true,
            )?);
            wh.push(ps.push(
                format!("{prefix}.wh_{gate}"),
                xavier(rng, hidden, hidden),
                true,
            )?);
            bias.push(ps.push(
                format!("{prefix}.b_{gate}"),
                TensorValue::zeros(vec![hidden]),
                true,
            )?);
        }
        Ok(LstmCell {
            wx: [wx[0], wx[1], wx[2], wx[3]],
            wh: [wh[0], wh[1], wh[2], wh[3]],
            bias: [bias[0], bias[1], bias[2], bias[3]],
            hidden,
        })
    }

    /// One step over a batch of rows: x `[R, in]`, h/c `[R, H]`.
    pub fn step(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        x: ValueId,
        h: ValueId,
        c: ValueId,
    ) -> Result<(ValueId, ValueId)> {
        let rows = tape.shape(x)[0];
        let mut gates = Vec::with_capacity(4);
        for k in 0..4 {
            let wx = tape.param(ps, self.wx[k]);
            let wh = tape.param(ps, self.wh[k]);
            let b = tape.param(ps, self.bias[k]);
            let xs = tape.matmul_t(x, wx, false, true)?;
            let hs = tape.matmul_t(h, wh, false, true)?;
            let sum = tape.add(xs, hs)?;
            let b = tape.broadcast(b, vec![rows, self.hidden])?;
            gates.push(tape.add(sum, b)?);
        }
        let i = tape.sigmoid(gates[0]);
        let f = tape.sigmoid(gates[1]);
        let g = tape.tanh(gates[2]);
        let o = tape.sigmoid(gates[3]);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

/// Per-head transition-bias parameters: the additive query bias `b` and
/// the embedding `u` of the scalar transition probability.
#[derive(Debug, Clone)]
pub struct TransitionBiasRefs {
    pub per_head: Vec<(ParamRef, ParamRef)>,
}

impl TransitionBiasRefs {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        heads: usize,
        d_h: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut per_head = Vec::with_capacity(heads);
        for h in 0..heads {
            let limit = (1.0 / d_h as f64).sqrt();
            let b = ps.push(
                format!("{prefix}.h{h}.bias"),
                uniform_vec(rng, d_h, limit),
                true,
            )?;
            let u = ps.push(
                format!("{prefix}.h{h}.u"),
                uniform_vec(rng, d_h, limit),
                true,
            )?;
            per_head.push((b, u));
        }
        Ok(TransitionBiasRefs { per_head })
    }
}

struct HeadRefs {
    wq: ParamRef,
    wk: ParamRef,
    wv: ParamRef,
}

/// Post-norm transformer encoder block: multi-head self-attention with
/// optional masking and transition bias, then a position-wise
/// feed-forward, each followed by residual + layer norm.
pub struct AttnBlock {
    heads: Vec<HeadRefs>,
    wo: ParamRef,
    ln1_g: ParamRef,
    ln1_b: ParamRef,
    ff1: Dense,
    ff2: Dense,
    ln2_g: ParamRef,
    ln2_b: ParamRef,
    pub d_h: usize,
}

const LN_EPS: f64 = 1e-5;

impl AttnBlock {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        d: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d_h = d / heads;
        let mut head_refs = Vec::with_capacity(heads);
        for h in 0..heads {
            head_refs.push(HeadRefs {
                wq: ps.push(format!("{prefix}.h{h}.wq"), xavier(rng, d, d_h), true)?,
                wk: ps.push(format!("{prefix}.h{h}.wk"), xavier(rng, d, d_h), true)?,
                wv: ps.push(format!("{prefix}.h{h}.wv"), xavier(rng, d, d_h), true)?,
            });
        }
        let wo = ps.push(format!("{prefix}.wo"), xavier(rng, d, heads * d_h), true)?;
        let ln1_g = ps.push(format!("{prefix}.ln1.g"), TensorValue::filled(vec![d], 1.0), true)?;
        let ln1_b = ps.push(format!("{prefix}.ln1.b"), TensorValue::zeros(vec![d]), true)?;
        let ff1 = Dense::new(ps, &format!("{prefix}.ff1"), d, ff_dim, rng)?;
        let ff2 = Dense::new(ps, &format!("{prefix}.ff2"), ff_dim, d, rng)?;
        let ln2_g = ps.push(format!("{prefix}.ln2.g"), TensorValue::filled(vec![d], 1.0), true)?;
        let ln2_b = ps.push(format!("{prefix}.ln2.b"), TensorValue::zeros(vec![d]), true)?;
        Ok(AttnBlock {
            heads: head_refs,
            wo,
            ln1_g,
            ln1_b,
            ff1,
            ff2,
            ln2_g,
            ln2_b,
            d_h,
        })
    }

    /// `x` is `[.., L, D]`. `scores_mask`, when present, shapes the
    /// attention over keys (length = batch * L * L, true = attend).
    /// `transition` supplies per-head (bias, u) refs and the `[L, L]`
    /// probability constant; the biased combination weights are used
    /// as-is, without re-normalization.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        x: ValueId,
        scores_mask: Option<&[bool]>,
        transition: Option<(&TransitionBiasRefs, ValueId)>,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<ValueId> {
        let shape = tape.shape(x).to_vec();
        let l = shape[shape.len() - 2];
        let scale = 1.0 / (self.d_h as f64).sqrt();

        let mut head_outs = Vec::with_capacity(self.heads.len());
        for (hi, head) in self.heads.iter().enumerate() {
            let wq = tape.param(ps, head.wq);
            let wk = tape.param(ps, head.wk);
            let wv = tape.param(ps, head.wv);
            let q = tape.matmul(x, wq)?;
            let k = tape.matmul(x, wk)?;
            let v = tape.matmul(x, wv)?;
            let scores = tape.matmul_t(q, k, false, true)?;
            let scores = tape.scale(scores, scale);
            let mut weights = match scores_mask {
                Some(mask) => tape.masked_softmax(scores, mask)?,
                None => tape.softmax(scores)?,
            };
            if let Some((bias_refs, tmat)) = transition {
                let (b_ref, u_ref) = bias_refs.per_head[hi];
                let b = tape.param(ps, b_ref);
                let u = tape.param(ps, u_ref);
                let u_col = tape.reshape(u, vec![self.d_h, 1])?;
                // s_j = (q_j + b) . u, one scalar per query row
                let qu = tape.matmul(q, u_col)?;
                let b_row = tape.reshape(b, vec![1, self.d_h])?;
                let bu = tape.matmul(b_row, u_col)?;
                let bu = tape.reshape(bu, vec![1])?;
                let qu_shape = tape.shape(qu).to_vec();
                let bu = tape.broadcast(bu, qu_shape)?;
                let s = tape.add(qu, bu)?;
                let ones = tape.constant(TensorValue::filled(vec![1, l], 1.0));
                let s_full = tape.matmul(s, ones)?;
                let bias = tape.mul(s_full, tmat)?;
                weights = tape.add(weights, bias)?;
            }
            head_outs.push(tape.matmul(weights, v)?);
        }
        let cat = if head_outs.len() == 1 {
            head_outs[0]
        } else {
            let axis = shape.len() - 1;
            tape.concat(&head_outs, axis)?
        };
        let wo = tape.param(ps, self.wo);
        let mut attn = tape.matmul_t(cat, wo, false, true)?;
        let mut dropout = dropout;
        if let Some((rate, rng)) = dropout.as_mut() {
            attn = apply_dropout(tape, attn, *rate, rng)?;
        }
        let res = tape.add(x, attn)?;
        let g1 = tape.param(ps, self.ln1_g);
        let b1 = tape.param(ps, self.ln1_b);
        let x1 = tape.layer_norm(res, g1, b1, LN_EPS)?;

        let h = self.ff1.forward(tape, ps, x1)?;
        let h = tape.gelu(h);
        let mut h = self.ff2.forward(tape, ps, h)?;
        if let Some((rate, rng)) = dropout.as_mut() {
            h = apply_dropout(tape, h, *rate, rng)?;
        }
        let res2 = tape.add(x1, h)?;
        let g2 = tape.param(ps, self.ln2_g);
        let b2 = tape.param(ps, self.ln2_b);
        tape.layer_norm(res2, g2, b2, LN_EPS)
    }
}

/// Inverted dropout by a seeded constant mask; identity at rate 0.
pub fn apply_dropout(
    tape: &mut Tape,
    x: ValueId,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ValueId> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let shape = tape.shape(x).to_vec();
    let len = tape.value(x).len();
    let data: Vec<f64> = (0..len)
        .map(|_| {
            if rng.gen_range(0.0..1.0) < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let mask = tape.constant(TensorValue::new(shape, data)?);
    tape.mul(x, mask)
}

/// Sinusoidal positional encoding for `t_len` positions of width `d`.
pub fn sinusoidal_encoding(t_len: usize, d: usize) -> TensorValue {
    let mut data = vec![0.0; t_len * d];
    for t in 0..t_len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let rate = 1.0 / 10000_f64.powf(2.0 * pair / d as f64);
            let angle = t as f64 * rate;
            data[t * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    TensorValue::new(vec![t_len, d], data).unwrap()
}
