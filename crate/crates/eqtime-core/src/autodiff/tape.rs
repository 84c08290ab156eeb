//! Reverse-mode automatic differentiation over dense f64 arrays.
//!
//! A [`Tape`] records primitive ops during the forward pass and replays
//! them in exact reverse order on [`Tape::backward`]. Gradients accumulate
//! additively; a tape is single-shot (backward twice is an error).
//!
//! Masking is a first-class argument to softmax and reductions: masked
//! entries are written as exact zeros and receive exactly zero gradient,
//! so padded events can never leak into outputs or parameter updates.

use crate::autodiff::{ParamRef, ParamSet, TensorValue};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: ValueId,
        b: ValueId,
        ta: bool,
        tb: bool,
    },
    Add {
        a: ValueId,
        b: ValueId,
    },
    Mul {
        a: ValueId,
        b: ValueId,
    },
    Scale {
        a: ValueId,
        c: f64,
    },
    Tanh {
        a: ValueId,
    },
    Sigmoid {
        a: ValueId,
    },
    Gelu {
        a: ValueId,
    },
    MaskedSoftmax {
        a: ValueId,
        mask: Vec<bool>,
    },
    Concat {
        parts: Vec<ValueId>,
        axis: usize,
    },
    Reduce {
        kind: ReduceKind,
        a: ValueId,
        axis: usize,
        mask: Option<Vec<bool>>,
    },
    Broadcast {
        a: ValueId,
    },
    Reshape {
        a: ValueId,
    },
    GatherRows {
        table: ValueId,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: ValueId,
        gain: ValueId,
        offset: ValueId,
        eps: f64,
    },
    BceWithLogits {
        logits: ValueId,
        targets: Vec<f64>,
    },
    SoftmaxXent {
        logits: ValueId,
        targets: Vec<i64>,
        live: Vec<bool>,
        probs: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: TensorValue,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    param: Option<ParamRef>,
}

/// Records primitive ops; replays them in reverse for gradients.
///
/// A tape binds parameters of a single [`ParamSet`]: repeated binds of
/// one parameter return the same leaf node.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_cache: std::collections::HashMap<usize, ValueId>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &TensorValue {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of the recorded value, populated by [`Tape::backward`].
    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, op: Op, value: TensorValue, needs_grad: bool, param: Option<ParamRef>) -> ValueId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            needs_grad,
            param,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Record a non-differentiable input.
    pub fn constant(&mut self, value: TensorValue) -> ValueId {
        self.push(Op::Leaf, value, false, None)
    }

    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.constant(TensorValue::scalar(v))
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> ValueId {
        self.constant(TensorValue::zeros(shape))
    }

    /// Bind a model parameter as a leaf; its gradient is routed back by
    /// [`Tape::accumulate_param_grads`]. Binding the same parameter
    /// again returns the existing leaf.
    pub fn param(&mut self, ps: &ParamSet, r: ParamRef) -> ValueId {
        if let Some(&id) = self.param_cache.get(&r.index()) {
            return id;
        }
        let p = ps.get(r);
        let mut value = p.value.clone();
        value.drop_grad();
        let id = self.push(Op::Leaf, value, p.trainable, Some(r));
        self.param_cache.insert(r.index(), id);
        id
    }

    // ── shape plumbing ──────────────────────────────────────────────

    pub fn reshape(&mut self, a: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let v = self.value(a).clone().reshaped(shape)?;
        let needs = self.needs(a);
        Ok(self.push(Op::Reshape { a }, v, needs, None))
    }

    /// Broadcast `a` to `shape`; `a`'s shape must be a suffix of `shape`.
    /// The backward pass sums gradients over the new leading dimensions.
    pub fn broadcast(&mut self, a: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let src = self.value(a).shape().to_vec();
        if src.len() > shape.len() || shape[shape.len() - src.len()..] != src[..] {
            return Err(Error::Dimension(format!(
                "cannot broadcast {src:?} to {shape:?} (suffix mismatch)"
            )));
        }
        let reps: usize = shape[..shape.len() - src.len()].iter().product();
        let data = self.value(a).data();
        let mut out = Vec::with_capacity(reps * data.len());
        for _ in 0..reps {
            out.extend_from_slice(data);
        }
        let v = TensorValue::new(shape, out)?;
        let needs = self.needs(a);
        Ok(self.push(Op::Broadcast { a }, v, needs, None))
    }

    pub fn concat(&mut self, parts: &[ValueId], axis: usize) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero parts".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::Dimension(format!(
                "concat axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(Error::Dimension(format!(
                    "concat part shape {s:?} incompatible with {first:?} on axis {axis}"
                )));
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let extent = s[axis];
            let src = self.value(p).data();
            for o in 0..outer {
                let dst_start = (o * axis_total + offset) * inner;
                let src_start = o * extent * inner;
                data[dst_start..dst_start + extent * inner]
                    .copy_from_slice(&src[src_start..src_start + extent * inner]);
            }
            offset += extent;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let v = TensorValue::new(shape, data)?;
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            v,
            needs,
            None,
        ))
    }

    /// Rows of `table` selected by index, in order (embedding lookup).
    pub fn gather_rows(&mut self, table: ValueId, ids: &[usize]) -> Result<ValueId> {
        let shape = self.value(table).shape();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "gather_rows expects a 2-D table, got {shape:?}"
            )));
        }
        let (k, m) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= k) {
            return Err(Error::UnknownType(format!(
                "row id {bad} out of range for table with {k} rows"
            )));
        }
        let data = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * m);
        for &i in ids {
            out.extend_from_slice(&data[i * m..(i + 1) * m]);
        }
        let v = TensorValue::new(vec![ids.len(), m], out)?;
        let needs = self.needs(table);
        Ok(self.push(
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            v,
            needs,
            None,
        ))
    }

    // ── elementwise ─────────────────────────────────────────────────

    fn binary_shapes(&self, a: ValueId, b: ValueId, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_shapes(a, b, "add")?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let v = TensorValue::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, v, needs, None))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_shapes(a, b, "mul")?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let v = TensorValue::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul { a, b }, v, needs, None))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let v = TensorValue::new(self.value(a).shape().to_vec(), data).unwrap();
        let needs = self.needs(a);
        self.push(Op::Scale { a, c }, v, needs, None)
    }

    fn unary(&mut self, a: ValueId, f: impl Fn(f64) -> f64, op: Op) -> ValueId {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| f(x)).collect();
        let v = TensorValue::new(self.value(a).shape().to_vec(), data).unwrap();
        let needs = self.needs(a);
        self.push(op, v, needs, None)
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        self.unary(a, f64::tanh, Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        self.unary(a, sigmoid, Op::Sigmoid { a })
    }

    pub fn gelu(&mut self, a: ValueId) -> ValueId {
        self.unary(a, gelu, Op::Gelu { a })
    }

    // ── matmul ──────────────────────────────────────────────────────

    /// Matrix product with optional transposition of either operand's
    /// trailing two dims. Leading (batch) dims must match exactly, or be
    /// absent on one side, in which case that operand is shared across
    /// the batch.
    pub fn matmul_t(&mut self, a: ValueId, b: ValueId, ta: bool, tb: bool) -> Result<ValueId> {
        let (ash, bsh) = (self.value(a).shape(), self.value(b).shape());
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(Error::Dimension(format!(
                "matmul needs rank >= 2 operands, got {ash:?} x {bsh:?}"
            )));
        }
        let (am, ak) = logical_dims(ash, ta);
        let (bk, bn) = logical_dims(bsh, tb);
        if ak != bk {
            return Err(Error::Dimension(format!(
                "matmul inner dims disagree: {ash:?} (ta={ta}) x {bsh:?} (tb={tb})"
            )));
        }
        let abatch = &ash[..ash.len() - 2];
        let bbatch = &bsh[..bsh.len() - 2];
        let batch_shape: Vec<usize> = if abatch == bbatch {
            abatch.to_vec()
        } else if abatch.is_empty() {
            bbatch.to_vec()
        } else if bbatch.is_empty() {
            abatch.to_vec()
        } else {
            return Err(Error::Dimension(format!(
                "matmul batch dims disagree: {ash:?} x {bsh:?}"
            )));
        };
        let batch: usize = batch_shape.iter().product();
        let a_stride = if abatch.is_empty() { 0 } else { am * ak };
        let b_stride = if bbatch.is_empty() { 0 } else { bk * bn };
        let mut out = vec![0.0; batch * am * bn];
        {
            let adata = self.value(a).data();
            let bdata = self.value(b).data();
            for i in 0..batch {
                mm_acc(
                    &adata[i * a_stride..i * a_stride + am * ak],
                    &bdata[i * b_stride..i * b_stride + bk * bn],
                    am,
                    ak,
                    bn,
                    ta,
                    tb,
                    false,
                    &mut out[i * am * bn..(i + 1) * am * bn],
                );
            }
        }
        let mut shape = batch_shape;
        shape.push(am);
        shape.push(bn);
        let needs = self.needs(a) || self.needs(b);
        let v = TensorValue::new(shape, out)?;
        Ok(self.push(Op::MatMul { a, b, ta, tb }, v, needs, None))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.matmul_t(a, b, false, false)
    }

    // ── softmax / reductions ────────────────────────────────────────

    /// Softmax along the last axis restricted to live entries. Masked
    /// entries come out as exact zeros.
    pub fn masked_softmax(&mut self, a: ValueId, mask: &[bool]) -> Result<ValueId> {
        let shape = self.value(a).shape().to_vec();
        let n = *shape.last().ok_or_else(|| {
            Error::Dimension("masked_softmax needs rank >= 1".into())
        })?;
        if mask.len() != self.value(a).len() {
            return Err(Error::Dimension(format!(
                "mask length {} does not match value length {}",
                mask.len(),
                self.value(a).len()
            )));
        }
        let rows = self.value(a).len() / n;
        let mut out = vec![0.0; rows * n];
        {
            let data = self.value(a).data();
            for r in 0..rows {
                let x = &data[r * n..(r + 1) * n];
                let m = &mask[r * n..(r + 1) * n];
                let mut rowmax = f64::NEG_INFINITY;
                for j in 0..n {
                    if m[j] && x[j] > rowmax {
                        rowmax = x[j];
                    }
                }
                if rowmax == f64::NEG_INFINITY {
                    return Err(Error::DegenerateRow(format!(
                        "masked_softmax row {r} has no live entries"
                    )));
                }
                let mut denom = 0.0;
                for j in 0..n {
                    if m[j] {
                        let e = (x[j] - rowmax).exp();
                        out[r * n + j] = e;
                        denom += e;
                    }
                }
                for j in 0..n {
                    if m[j] {
                        out[r * n + j] /= denom;
                    }
                }
            }
        }
        let needs = self.needs(a);
        let v = TensorValue::new(shape, out)?;
        Ok(self.push(
            Op::MaskedSoftmax {
                a,
                mask: mask.to_vec(),
            },
            v,
            needs,
            None,
        ))
    }

    pub fn softmax(&mut self, a: ValueId) -> Result<ValueId> {
        let mask = vec![true; self.value(a).len()];
        self.masked_softmax(a, &mask)
    }

    /// Reduce one axis away. An optional mask (shaped like the value's
    /// dims up to and including `axis`) excludes entries entirely; masked
    /// mean divides by the live count.
    pub fn reduce(
        &mut self,
        kind: ReduceKind,
        a: ValueId,
        axis: usize,
        mask: Option<&[bool]>,
    ) -> Result<ValueId> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "reduce axis {axis} out of range for rank {}",
                shape.len()
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let extent = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        if let Some(m) = mask {
            if m.len() != outer * extent {
                return Err(Error::Dimension(format!(
                    "reduce mask length {} does not match outer*axis {}",
                    m.len(),
                    outer * extent
                )));
            }
        }
        let mut out_shape: Vec<usize> = shape[..axis].to_vec();
        out_shape.extend_from_slice(&shape[axis + 1..]);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut out = vec![0.0; outer * inner];
        {
            let data = self.value(a).data();
            for o in 0..outer {
                let mut live = 0usize;
                for j in 0..extent {
                    let alive = mask.map_or(true, |m| m[o * extent + j]);
                    if !alive {
                        continue;
                    }
                    live += 1;
                    let base = (o * extent + j) * inner;
                    for i in 0..inner {
                        out[o * inner + i] += data[base + i];
                    }
                }
                if kind == ReduceKind::Mean {
                    if live == 0 {
                        return Err(Error::DegenerateRow(format!(
                            "masked mean over slice {o} has no live entries"
                        )));
                    }
                    let inv = 1.0 / live as f64;
                    for i in 0..inner {
                        out[o * inner + i] *= inv;
                    }
                }
            }
        }
        let needs = self.needs(a);
        let v = TensorValue::new(out_shape, out)?;
        Ok(self.push(
            Op::Reduce {
                kind,
                a,
                axis,
                mask: mask.map(|m| m.to_vec()),
            },
            v,
            needs,
            None,
        ))
    }

    pub fn reduce_sum(&mut self, a: ValueId, axis: usize, mask: Option<&[bool]>) -> Result<ValueId> {
        self.reduce(ReduceKind::Sum, a, axis, mask)
    }

    pub fn reduce_mean(&mut self, a: ValueId, axis: usize, mask: Option<&[bool]>) -> Result<ValueId> {
        self.reduce(ReduceKind::Mean, a, axis, mask)
    }

    // ── normalization ───────────────────────────────────────────────

    /// Layer normalization over the last axis with trainable gain/offset.
    pub fn layer_norm(&mut self, x: ValueId, gain: ValueId, offset: ValueId, eps: f64) -> Result<ValueId> {
        let shape = self.value(x).shape().to_vec();
        let d = *shape.last().unwrap();
        if self.value(gain).shape() != [d] || self.value(offset).shape() != [d] {
            return Err(Error::Dimension(format!(
                "layer_norm gain/offset must be [{d}], got {:?} and {:?}",
                self.value(gain).shape(),
                self.value(offset).shape()
            )));
        }
        let rows = self.value(x).len() / d;
        let mut out = vec![0.0; rows * d];
        {
            let data = self.value(x).data();
            let g = self.value(gain).data();
            let b = self.value(offset).data();
            for r in 0..rows {
                let row = &data[r * d..(r + 1) * d];
                let (mu, inv) = ln_stats(row, eps);
                for j in 0..d {
                    out[r * d + j] = (row[j] - mu) * inv * g[j] + b[j];
                }
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(offset);
        let v = TensorValue::new(shape, out)?;
        Ok(self.push(Op::LayerNorm { x, gain, offset, eps }, v, needs, None))
    }

    // ── losses ──────────────────────────────────────────────────────

    /// Mean binary cross-entropy over all entries, computed from logits
    /// with the numerically stable formulation.
    pub fn bce_with_logits_mean(&mut self, logits: ValueId, targets: &[f64]) -> Result<ValueId> {
        if targets.len() != self.value(logits).len() {
            return Err(Error::Dimension(format!(
                "bce targets length {} does not match logits length {}",
                targets.len(),
                self.value(logits).len()
            )));
        }
        let data = self.value(logits).data();
        let n = data.len() as f64;
        let mut loss = 0.0;
        for (&x, &z) in data.iter().zip(targets) {
            loss += x.max(0.0) - x * z + (-x.abs()).exp().ln_1p();
        }
        loss /= n;
        let needs = self.needs(logits);
        let v = TensorValue::scalar(loss);
        Ok(self.push(
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            v,
            needs,
            None,
        ))
    }

    /// Mean categorical cross-entropy over live rows of `[rows, vocab]`
    /// logits. Dead rows contribute exactly zero loss and gradient.
    pub fn softmax_xent_mean(&mut self, logits: ValueId, targets: &[i64], live: &[bool]) -> Result<ValueId> {
        let shape = self.value(logits).shape();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "softmax_xent expects [rows, vocab] logits, got {shape:?}"
            )));
        }
        let (rows, vocab) = (shape[0], shape[1]);
        if targets.len() != rows || live.len() != rows {
            return Err(Error::Dimension(format!(
                "softmax_xent targets/live length {}/{} does not match rows {rows}",
                targets.len(),
                live.len()
            )));
        }
        let live_count = live.iter().filter(|&&l| l).count();
        if live_count == 0 {
            return Err(Error::DegenerateRow(
                "softmax_xent with zero live rows".into(),
            ));
        }
        let data = self.value(logits).data();
        let mut probs = vec![0.0; rows * vocab];
        let mut loss = 0.0;
        for r in 0..rows {
            if !live[r] {
                continue;
            }
            let t = targets[r];
            if t < 0 || t as usize >= vocab {
                return Err(Error::Contract(format!(
                    "target {t} out of range for vocab {vocab} at row {r}"
                )));
            }
            let row = &data[r * vocab..(r + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..vocab {
                let e = (row[j] - max).exp();
                probs[r * vocab + j] = e;
                denom += e;
            }
            for j in 0..vocab {
                probs[r * vocab + j] /= denom;
            }
            loss -= probs[r * vocab + t as usize].max(1e-300).ln();
        }
        loss /= live_count as f64;
        let needs = self.needs(logits);
        let v = TensorValue::scalar(loss);
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                live: live.to_vec(),
                probs,
            },
            v,
            needs,
            None,
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    fn grad_buf(&mut self, id: ValueId) -> &mut Vec<f64> {
        let len = self.nodes[id.0].value.len();
        self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; len])
    }

    /// Reverse sweep from a scalar loss. Populates `grad` on every
    /// reachable node that needs one. Single-shot per tape.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; re-record before differentiating again".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        *self.grad_buf(loss) = vec![1.0];
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let go = std::mem::take(&mut self.nodes[i].grad).unwrap();
            self.propagate(i, &go);
            self.nodes[i].grad = Some(go);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, go: &[f64]) {
        // Reads of input values borrow nodes immutably; grad writes are
        // funneled through grad_buf. Values are cloned out where both are
        // needed at once; shapes are small at desk scale.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Reshape { a } => {
                let a = *a;
                if self.needs(a) {
                    let buf = self.grad_buf(a);
                    for (g, d) in buf.iter_mut().zip(go) {
                        *g += d;
                    }
                }
            }
            Op::Broadcast { a } => {
                let a = *a;
                if self.needs(a) {
                    let n = self.nodes[a.0].value.len();
                    let buf = self.grad_buf(a);
                    for (k, d) in go.iter().enumerate() {
                        buf[k % n] += d;
                    }
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let buf = self.grad_buf(a);
                    for (g, d) in buf.iter_mut().zip(go) {
                        *g += d;
                    }
                }
                if self.needs(b) {
                    let buf = self.grad_buf(b);
                    for (g, d) in buf.iter_mut().zip(go) {
                        *g += d;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let bv = self.nodes[b.0].value.data().to_vec();
                    let buf = self.grad_buf(a);
                    for ((g, d), x) in buf.iter_mut().zip(go).zip(&bv) {
                        *g += d * x;
                    }
                }
                if self.needs(b) {
                    let av = self.nodes[a.0].value.data().to_vec();
                    let buf = self.grad_buf(b);
                    for ((g, d), x) in buf.iter_mut().zip(go).zip(&av) {
                        *g += d * x;
                    }
                }
            }
            Op::Scale { a, c } => {
                let (a, c) = (*a, *c);
                if self.needs(a) {
                    let buf = self.grad_buf(a);
                    for (g, d) in buf.iter_mut().zip(go) {
                        *g += d * c;
                    }
                }
            }
            Op::Tanh { a } => {
                let a = *a;
                if self.needs(a) {
                    let y = self.nodes[i].value.data().to_vec();
                    let buf = self.grad_buf(a);
                    for ((g, d), yi) in buf.iter_mut().zip(go).zip(&y) {
                        *g += d * (1.0 - yi * yi);
                    }
                }
            }
            Op::Sigmoid { a } => {
                let a = *a;
                if self.needs(a) {
                    let y = self.nodes[i].value.data().to_vec();
                    let buf = self.grad_buf(a);
                    for ((g, d), yi) in buf.iter_mut().zip(go).zip(&y) {
                        *g += d * yi * (1.0 - yi);
                    }
                }
            }
            Op::Gelu { a } => {
                let a = *a;
                if self.needs(a) {
                    let x = self.nodes[a.0].value.data().to_vec();
                    let buf = self.grad_buf(a);
                    for ((g, d), xi) in buf.iter_mut().zip(go).zip(&x) {
                        *g += d * gelu_deriv(*xi);
                    }
                }
            }
            Op::MaskedSoftmax { a, mask } => {
                let a = *a;
                if self.needs(a) {
                    let mask = mask.clone();
                    let y = self.nodes[i].value.data().to_vec();
                    let n = *self.nodes[i].value.shape().last().unwrap();
                    let rows = y.len() / n;
                    let buf = self.grad_buf(a);
                    for r in 0..rows {
                        let mut dot = 0.0;
                        for j in 0..n {
                            if mask[r * n + j] {
                                dot += go[r * n + j] * y[r * n + j];
                            }
                        }
                        for j in 0..n {
                            if mask[r * n + j] {
                                buf[r * n + j] += y[r * n + j] * (go[r * n + j] - dot);
                            }
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                let out_shape = self.nodes[i].value.shape().to_vec();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let axis_total = out_shape[axis];
                let mut offset = 0;
                for p in parts {
                    let extent = self.nodes[p.0].value.shape()[axis];
                    if self.needs(p) {
                        let buf = self.grad_buf(p);
                        for o in 0..outer {
                            let src_start = (o * axis_total + offset) * inner;
                            let dst_start = o * extent * inner;
                            for k in 0..extent * inner {
                                buf[dst_start + k] += go[src_start + k];
                            }
                        }
                    }
                    offset += extent;
                }
            }
            Op::Reduce { kind, a, axis, mask } => {
                let (kind, a, axis) = (*kind, *a, *axis);
                if self.needs(a) {
                    let mask = mask.clone();
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    let outer: usize = shape[..axis].iter().product();
                    let extent = shape[axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let buf = self.grad_buf(a);
                    for o in 0..outer {
                        let live = mask.as_ref().map_or(extent, |m| {
                            (0..extent).filter(|&j| m[o * extent + j]).count()
                        });
                        let w = match kind {
                            ReduceKind::Sum => 1.0,
                            ReduceKind::Mean => 1.0 / live as f64,
                        };
                        for j in 0..extent {
                            let alive = mask.as_ref().map_or(true, |m| m[o * extent + j]);
                            if !alive {
                                continue;
                            }
                            let base = (o * extent + j) * inner;
                            for k in 0..inner {
                                buf[base + k] += go[o * inner + k] * w;
                            }
                        }
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let table = *table;
                if self.needs(table) {
                    let ids = ids.clone();
                    let m = self.nodes[table.0].value.shape()[1];
                    let buf = self.grad_buf(table);
                    for (l, &row) in ids.iter().enumerate() {
                        for k in 0..m {
                            buf[row * m + k] += go[l * m + k];
                        }
                    }
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let ash = self.nodes[a.0].value.shape().to_vec();
                let bsh = self.nodes[b.0].value.shape().to_vec();
                let (m, k) = logical_dims(&ash, ta);
                let (_, n) = logical_dims(&bsh, tb);
                let a_batched = ash.len() > 2;
                let b_batched = bsh.len() > 2;
                let batch = go.len() / (m * n);
                let a_stride = if a_batched { m * k } else { 0 };
                let b_stride = if b_batched { k * n } else { 0 };
                if self.needs(a) {
                    let bdata = self.nodes[b.0].value.data().to_vec();
                    let buf = self.grad_buf(a);
                    for i in 0..batch {
                        // dA_logical = dC x B_eff^T; write transposed when A is stored transposed
                        mm_acc(
                            &go[i * m * n..(i + 1) * m * n],
                            &bdata[i * b_stride..i * b_stride + k * n],
                            m,
                            n,
                            k,
                            false,
                            !tb,
                            ta,
                            &mut buf[i * a_stride..i * a_stride + m * k],
                        );
                    }
                }
                if self.needs(b) {
                    let adata = self.nodes[a.0].value.data().to_vec();
                    let buf = self.grad_buf(b);
                    for i in 0..batch {
                        // dB_logical = A_eff^T x dC
                        mm_acc(
                            &adata[i * a_stride..i * a_stride + m * k],
                            &go[i * m * n..(i + 1) * m * n],
                            k,
                            m,
                            n,
                            !ta,
                            false,
                            tb,
                            &mut buf[i * b_stride..i * b_stride + k * n],
                        );
                    }
                }
            }
            Op::LayerNorm { x, gain, offset, eps } => {
                let (x, gain, offset, eps) = (*x, *gain, *offset, *eps);
                let d = *self.nodes[x.0].value.shape().last().unwrap();
                let rows = self.nodes[x.0].value.len() / d;
                let xdata = self.nodes[x.0].value.data().to_vec();
                let gdata = self.nodes[gain.0].value.data().to_vec();
                if self.needs(x) {
                    let buf = self.grad_buf(x);
                    for r in 0..rows {
                        let row = &xdata[r * d..(r + 1) * d];
                        let (mu, inv) = ln_stats(row, eps);
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..d {
                            let xhat = (row[j] - mu) * inv;
                            let dxhat = go[r * d + j] * gdata[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                        }
                        mean_dxhat /= d as f64;
                        mean_dxhat_xhat /= d as f64;
                        for j in 0..d {
                            let xhat = (row[j] - mu) * inv;
                            let dxhat = go[r * d + j] * gdata[j];
                            buf[r * d + j] += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                }
                if self.needs(gain) {
                    let buf = self.grad_buf(gain);
                    for r in 0..rows {
                        let row = &xdata[r * d..(r + 1) * d];
                        let (mu, inv) = ln_stats(row, eps);
                        for j in 0..d {
                            buf[j] += go[r * d + j] * (row[j] - mu) * inv;
                        }
                    }
                }
                if self.needs(offset) {
                    let buf = self.grad_buf(offset);
                    for r in 0..rows {
                        for j in 0..d {
                            buf[j] += go[r * d + j];
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let logits = *logits;
                if self.needs(logits) {
                    let targets = targets.clone();
                    let x = self.nodes[logits.0].value.data().to_vec();
                    let n = x.len() as f64;
                    let scale = go[0] / n;
                    let buf = self.grad_buf(logits);
                    for (j, (&xi, &zi)) in x.iter().zip(&targets).enumerate() {
                        buf[j] += scale * (sigmoid(xi) - zi);
                    }
                }
            }
            Op::SoftmaxXent { logits, targets, live, probs } => {
                let logits = *logits;
                if self.needs(logits) {
                    let targets = targets.clone();
                    let live = live.clone();
                    let probs = probs.clone();
                    let vocab = self.nodes[logits.0].value.shape()[1];
                    let live_count = live.iter().filter(|&&l| l).count() as f64;
                    let scale = go[0] / live_count;
                    let buf = self.grad_buf(logits);
                    for (r, &alive) in live.iter().enumerate() {
                        if !alive {
                            continue;
                        }
                        let t = targets[r] as usize;
                        for j in 0..vocab {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            buf[r * vocab + j] += scale * (probs[r * vocab + j] - onehot);
                        }
                    }
                }
            }
        }
    }

    /// Route gradients of bound parameter leaves back into the set,
    /// accumulating additively (the caller zeroes between steps).
    pub fn accumulate_param_grads(&self, ps: &mut ParamSet) {
        for node in &self.nodes {
            if let (Some(r), Some(g)) = (node.param, node.grad.as_deref()) {
                ps.get_mut(*&r).value.accumulate_grad(g);
            }
        }
    }
}

fn logical_dims(shape: &[usize], transposed: bool) -> (usize, usize) {
    let r = shape.len();
    if transposed {
        (shape[r - 1], shape[r - 2])
    } else {
        (shape[r - 2], shape[r - 1])
    }
}

/// out(+)= A_eff x B_eff, with per-operand transposition of the stored
/// layout and optional transposition of the output write.
#[allow(clippy::too_many_arguments)]
fn mm_acc(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
    transpose_out: bool,
    out: &mut [f64],
) {
    for i in 0..m {
        for p in 0..k {
            let av = if ta { a[p * m + i] } else { a[i * k + p] };
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                let slot = if transpose_out { j * m + i } else { i * n + j };
                out[slot] += av * bv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn ln_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mu = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / d;
    (mu, 1.0 / (var + eps).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Trainable leaf without ParamSet plumbing (tests only).
    fn leaf(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> ValueId {
        let value = TensorValue::new(shape, data).unwrap();
        tape.push(Op::Leaf, value, true, None)
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(TensorValue::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = tape.constant(TensorValue::matrix(&[vec![3.0], vec![4.0]]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_dot() {
        let mut tape = Tape::new();
        let a = tape.constant(TensorValue::matrix(&[vec![1.0, 2.0]]).unwrap());
        let b = tape.constant(TensorValue::matrix(&[vec![3.0], vec![4.0]]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let a = tape.zeros(vec![2, 3]);
        let b = tape.zeros(vec![2, 2]);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    // Frozen from the finite-difference oracle in the gradcheck module:
    // d/dA sum(A x B) at A=[[1,2]], B=[[3],[4]] equals [[3,4]].
    #[test]
    fn matmul_grad_matches_oracle() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![1, 2], vec![1.0, 2.0]);
        let b = tape.constant(TensorValue::matrix(&[vec![3.0], vec![4.0]]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.reduce_sum(c, 0, None).unwrap();
        let loss = tape.reduce_sum(loss, 0, None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![1], vec![2.0]);
        let l = tape.mul(a, a).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[4.0]);
        assert!(matches!(tape.backward(l), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn masked_softmax_symmetry_and_single_live() {
        let mut tape = Tape::new();
        let x = tape.constant(TensorValue::vector(&[0.0, 0.0]));
        let y = tape.masked_softmax(x, &[true, true]).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        let x2 = tape.constant(TensorValue::vector(&[5.0, -1000.0]));
        let y2 = tape.masked_softmax(x2, &[true, false]).unwrap();
        assert_eq!(tape.value(y2).data(), &[1.0, 0.0]);
    }

    // Frozen from the direct-evaluation oracle: softmax([1,2,3]).
    #[test]
    fn masked_softmax_direct_value() {
        let mut tape = Tape::new();
        let x = tape.constant(TensorValue::vector(&[1.0, 2.0, 3.0]));
        let y = tape.masked_softmax(x, &[true, true, true]).unwrap();
        let expect = [
            0.09003057317038046,
            0.24472847105479764,
            0.6652409557748218,
        ];
        for (got, want) in tape.value(y).data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        let s: f64 = tape.value(y).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_fully_masked_row_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(TensorValue::vector(&[1.0, 2.0]));
        assert!(matches!(
            tape.masked_softmax(x, &[false, false]),
            Err(Error::DegenerateRow(_))
        ));
    }

    #[test]
    fn masked_entries_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3], vec![1.0, 2.0, 3.0]);
        let y = tape.masked_softmax(x, &[true, false, true]).unwrap();
        let w = tape.constant(TensorValue::vector(&[1.0, 7.0, 2.0]));
        let yw = tape.mul(y, w).unwrap();
        let loss = tape.reduce_sum(yw, 0, None).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g[1], 0.0);
        assert!(g[0] != 0.0 && g[2] != 0.0);
    }

    #[test]
    fn reduce_mean_and_masked_mean() {
        let mut tape = Tape::new();
        let x = tape.constant(TensorValue::vector(&[2.0, 4.0]));
        let m = tape.reduce_mean(x, 0, None).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0]);

        let y = tape.constant(TensorValue::vector(&[2.0, 4.0, 100.0]));
        let mm = tape.reduce_mean(y, 0, Some(&[true, true, false])).unwrap();
        assert_eq!(tape.value(mm).data(), &[3.0]);
    }

    #[test]
    fn reduce_masked_mean_grad_splits_by_live_count() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2], vec![1.0, 5.0]);
        let m = tape.reduce_mean(x, 0, None).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn reduce_degenerate_masked_mean_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(TensorValue::vector(&[1.0, 2.0]));
        assert!(matches!(
            tape.reduce_mean(x, 0, Some(&[false, false])),
            Err(Error::DegenerateRow(_))
        ));
    }

    #[test]
    fn concat_axis0_and_backward_split() {
        let mut tape = Tape::new();
        let q = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        let r = leaf(&mut tape, vec![1], vec![3.0]);
        let c = tape.concat(&[q, r], 0).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
        let s = tape.reduce_sum(c, 0, None).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(q).unwrap(), &[1.0, 1.0]);
        assert_eq!(tape.grad(r).unwrap(), &[1.0]);
    }

    #[test]
    fn concat_rejects_mismatched_side_dims() {
        let mut tape = Tape::new();
        let a = tape.zeros(vec![2, 3]);
        let b = tape.zeros(vec![2, 4]);
        assert!(tape.concat(&[a, b], 0).is_err());
        assert!(tape.concat(&[a, b], 1).is_ok());
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let x = tape.constant(TensorValue::vector(&[0.0]));
        let t = tape.tanh(x);
        assert_eq!(tape.value(t).data(), &[0.0]);
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data(), &[0.5]);
    }

    // Frozen from the central finite-difference oracle (h=1e-6):
    // d/dx tanh(x) at 0.7 = 1/cosh^2(0.7) = 0.6347402044448008.
    #[test]
    fn tanh_grad_matches_oracle() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1], vec![0.7]);
        let y = tape.tanh(x);
        tape.backward(y).unwrap();
        let g = tape.grad(x).unwrap()[0];
        assert!((g - 0.6347402044448008).abs() < 1e-12, "{g}");
        let h = 1e-6;
        let fd = ((0.7f64 + h).tanh() - (0.7f64 - h).tanh()) / (2.0 * h);
        assert!((g - fd).abs() < 1e-9);
    }

    #[test]
    fn broadcast_sums_grad_over_leading_dims() {
        let mut tape = Tape::new();
        let b = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        let big = tape.broadcast(b, vec![3, 2]).unwrap();
        assert_eq!(tape.value(big).data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let s = tape.reduce_sum(big, 0, None).unwrap();
        let s = tape.reduce_sum(s, 0, None).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn gather_rows_accumulates_duplicate_ids() {
        let mut tape = Tape::new();
        let table = leaf(&mut tape, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let g = tape.gather_rows(table, &[1, 1, 0]).unwrap();
        assert_eq!(tape.value(g).data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let s = tape.reduce_sum(g, 0, None).unwrap();
        let s = tape.reduce_sum(s, 0, None).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(table).unwrap(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mut tape = Tape::new();
        let table = tape.zeros(vec![2, 2]);
        assert!(matches!(
            tape.gather_rows(table, &[2]),
            Err(Error::UnknownType(_))
        ));
    }

    #[test]
    fn bce_all_zero_logits_is_ln2() {
        let mut tape = Tape::new();
        let x = tape.zeros(vec![2, 2]);
        let l = tape.bce_with_logits_mean(x, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((tape.value(l).data()[0] - (2.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_xent_uniform_is_ln_vocab() {
        let mut tape = Tape::new();
        let x = tape.zeros(vec![3, 4]);
        let l = tape
            .softmax_xent_mean(x, &[0, 1, 2], &[true, true, false])
            .unwrap();
        assert!((tape.value(l).data()[0] - (4.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn param_grads_accumulate_additively() {
        let mut ps = ParamSet::new();
        let r = ps.push("p", TensorValue::scalar(3.0), true).unwrap();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let p = tape.param(&ps, r);
            let l = tape.mul(p, p).unwrap();
            tape.backward(l).unwrap();
            tape.accumulate_param_grads(&mut ps);
        }
        // d(p^2)/dp = 6 per pass, accumulated twice without zeroing
        assert_eq!(ps.get(r).value.grad().unwrap(), &[12.0]);
        ps.zero_grads();
        assert_eq!(ps.get(r).value.grad().unwrap(), &[0.0]);
    }

    #[test]
    fn single_parameter_loss_grad_is_one() {
        let mut ps = ParamSet::new();
        let r = ps.push("p", TensorValue::scalar(5.0), true).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&ps, r);
        tape.backward(p).unwrap();
        tape.accumulate_param_grads(&mut ps);
        assert_eq!(ps.get(r).value.grad().unwrap(), &[1.0]);
    }

    #[test]
    fn batched_matmul_broadcasts_unbatched_side() {
        let mut tape = Tape::new();
        // two batch entries of [1,2] times shared [2,1]
        let a = tape.constant(TensorValue::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = leaf(&mut tape, vec![2, 1], vec![10.0, 100.0]);
        let c = tape.matmul(a, w).unwrap();
        assert_eq!(tape.shape(c), &[2, 1, 1]);
        assert_eq!(tape.value(c).data(), &[210.0, 430.0]);
        let s = tape.reduce_sum(c, 0, None).unwrap();
        let s = tape.reduce_sum(s, 0, None).unwrap();
        let s = tape.reduce_sum(s, 0, None).unwrap();
        tape.backward(s).unwrap();
        // dW sums contributions from both batch entries: [1+3, 2+4]
        assert_eq!(tape.grad(w).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn transposed_matmul_matches_manual() {
        let mut tape = Tape::new();
        let a = tape.constant(TensorValue::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.constant(TensorValue::matrix(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap());
        let c = tape.matmul_t(a, b, false, true).unwrap(); // A x B^T
        assert_eq!(tape.value(c).data(), &[17.0, 23.0, 39.0, 53.0]);
        let d = tape.matmul_t(a, b, true, false).unwrap(); // A^T x B
        assert_eq!(tape.value(d).data(), &[26.0, 30.0, 38.0, 44.0]);
    }
}
