//! Central finite-difference gradient checking.
//!
//! The oracle evaluates the forward pass only, so it stays independent of
//! the reverse sweep it is used to verify.

use crate::autodiff::{ParamSet, Tape, ValueId};
use crate::error::{Error, Result};

/// Outcome of a finite-difference sweep over every trainable component.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub components_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn eval_loss<F>(ps: &ParamSet, forward: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, ps)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(Error::Contract(format!(
            "gradcheck loss must be scalar, got {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Compare reverse-mode gradients of `forward` against central finite
/// differences with step `h`, for every component of every trainable
/// parameter in `ps`.
pub fn check_gradients<F>(ps: &mut ParamSet, forward: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<ValueId>,
{
    ps.zero_grads();
    let mut tape = Tape::new();
    let loss = forward(&mut tape, ps)?;
    tape.backward(loss)?;
    tape.accumulate_param_grads(ps);

    let analytic: Vec<(String, Vec<f64>)> = ps
        .iter()
        .filter(|p| p.trainable)
        .map(|p| (p.name.clone(), p.value.grad().unwrap_or(&[]).to_vec()))
        .collect();

    let mut max_rel_err = 0.0f64;
    let mut worst_param = String::new();
    let mut checked = 0usize;

    let refs: Vec<_> = ps.refs().collect();
    for r in refs {
        if !ps.get(r).trainable {
            continue;
        }
        let name = ps.get(r).value.shape().to_vec();
        let _ = name;
        let pname = ps.get(r).name.clone();
        let len = ps.get(r).value.len();
        let grads = analytic
            .iter()
            .find(|(n, _)| *n == pname)
            .map(|(_, g)| g.clone())
            .unwrap_or_default();
        for idx in 0..len {
            let orig = ps.get(r).value.data()[idx];
            ps.get_mut(r).value.data_mut()[idx] = orig + h;
            let plus = eval_loss(ps, &forward)?;
            ps.get_mut(r).value.data_mut()[idx] = orig - h;
            let minus = eval_loss(ps, &forward)?;
            ps.get_mut(r).value.data_mut()[idx] = orig;

            let fd = (plus - minus) / (2.0 * h);
            let g = grads.get(idx).copied().unwrap_or(0.0);
            let denom = g.abs().max(fd.abs()).max(1e-6);
            let rel = (g - fd).abs() / denom;
            checked += 1;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_param = format!("{pname}[{idx}]");
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_err,
        worst_param,
        components_checked: checked,
    })
}
