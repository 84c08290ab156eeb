//! Adam with global gradient-norm clipping.

use crate::autodiff::ParamSet;

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(ps: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let m = ps.iter().map(|p| vec![0.0; p.value.len()]).collect();
        let v = ps.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m,
            v,
        }
    }

    /// Scale all gradients so the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(ps: &mut ParamSet, max_norm: f64) -> f64 {
        let mut sq = 0.0;
        for p in ps.iter() {
            if p.trainable {
                if let Some(g) = p.value.grad() {
                    sq += g.iter().map(|x| x * x).sum::<f64>();
                }
            }
        }
        let norm = sq.sqrt();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in ps.iter_mut() {
                if p.trainable {
                    if let Some(g) = p.value.grad_mut() {
                        g.iter_mut().for_each(|x| *x *= scale);
                    }
                }
            }
        }
        norm
    }

    /// Apply one update from the accumulated gradients.
    pub fn step(&mut self, ps: &mut ParamSet) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, p) in ps.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let Some(grad) = p.value.grad() else { continue };
            let grad = grad.to_vec();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let data = p.value.data_mut();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, TensorValue};

    #[test]
    fn quadratic_loss_decreases() {
        // minimize p^2 from p = 3
        let mut ps = ParamSet::new();
        let r = ps.push("p", TensorValue::scalar(3.0), true).unwrap();
        let mut adam = Adam::new(&ps, 0.1, 0.9, 0.999, 1e-8);
        let mut losses = Vec::new();
        for _ in 0..10 {
            ps.zero_grads();
            let mut tape = Tape::new();
            let p = tape.param(&ps, r);
            let loss = tape.mul(p, p).unwrap();
            losses.push(tape.value(loss).data()[0]);
            tape.backward(loss).unwrap();
            tape.accumulate_param_grads(&mut ps);
            adam.step(&mut ps);
        }
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss not strictly decreasing: {losses:?}");
        }
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut ps = ParamSet::new();
        let r = ps.push("p", TensorValue::vector(&[0.0, 0.0]), true).unwrap();
        ps.get_mut(r).value.accumulate_grad(&[3.0, 4.0]);
        let norm = Adam::clip_global_norm(&mut ps, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let g = ps.get(r).value.grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
