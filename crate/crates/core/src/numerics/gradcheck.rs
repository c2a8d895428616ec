//! Central finite-difference verification of tape gradients.

use alloc::vec::Vec;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose difference quotient was unstable (likely a kink).
    pub skipped: Vec<usize>,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::arg("grad_check eps must lie in [1e-7, 1e-3]"));
    }
    Ok(())
}

/// Compares analytic coordinates against central differences of `f` around
/// `x0`. A coordinate is skipped when the quotients at `eps` and `eps/2`
/// disagree by more than 1e-3 relative, the signature of a non-differentiable
/// point.
pub fn check_coords<F>(
    mut f: F,
    x0: &[f64],
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_eps(eps)?;
    let mut x = x0.to_vec();
    let mut diff = |x: &mut [f64], i: usize, h: f64| -> Result<f64> {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(x)?;
        x[i] = orig - h;
        let down = f(x)?;
        x[i] = orig;
        Ok((up - down) / (2.0 * h))
    };
    let mut report = GradCheckReport::default();
    for &i in coords {
        let fd = diff(&mut x, i, eps)?;
        let fd_half = diff(&mut x, i, eps * 0.5)?;
        if (fd - fd_half).abs() > 1e-3 * f64::max(1.0, fd.abs()) {
            report.skipped.push(i);
            continue;
        }
        let rel = (analytic[i] - fd).abs() / f64::max(1.0, fd.abs());
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

/// Checks the gradient of a scalar-valued tape computation with respect to
/// its single input.
pub fn grad_check<F>(op: F, input: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.input(input.clone());
    let y = op(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads
        .wrt(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(input.shape()));
    let shape = input.shape().to_vec();
    let eval = |xs: &[f64]| -> Result<f64> {
        let mut t = Tape::new();
        let x = t.input(Tensor::new(shape.clone(), xs.to_vec())?);
        let y = op(&mut t, x)?;
        Ok(t.value(y).data()[0])
    };
    let coords: Vec<usize> = (0..input.len()).collect();
    check_coords(eval, input.data(), analytic.data(), &coords, eps)
}

/// Checks parameter gradients of `loss` on up to `per_param` randomly chosen
/// coordinates of every parameter tensor.
pub fn grad_check_params<F>(
    store: &ParamStore,
    loss: F,
    eps: f64,
    per_param: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>) -> Result<Var>,
{
    check_eps(eps)?;
    let grads = {
        let mut tape = Tape::with_params(store);
        let y = loss(&mut tape)?;
        tape.backward(y)?
    };
    let mut work = store.clone();
    let mut total = GradCheckReport::default();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).len();
        let analytic = grads
            .param(id)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| alloc::vec![0.0; n]);
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| rng.below(n)).collect()
        };
        let x0 = store.value(id).data().to_vec();
        let eval = |xs: &[f64]| -> Result<f64> {
            work.value_mut(id).data_mut().copy_from_slice(xs);
            let mut tape = Tape::with_params(&work);
            let y = loss(&mut tape)?;
            Ok(tape.value(y).data()[0])
        };
        // `work` is reborrowed by the closure; restore afterwards.
        let r = check_coords(eval, &x0, &analytic, &coords, eps)?;
        work.value_mut(id).data_mut().copy_from_slice(&x0);
        total.max_rel_error = total.max_rel_error.max(r.max_rel_error);
        total.checked += r.checked;
        total.skipped.extend(r.skipped);
    }
    Ok(total)
}
