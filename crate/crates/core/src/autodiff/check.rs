//! Finite-difference gradient checking.

use crate::autodiff::tape::{Tape, VarId};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative error between an analytic and a central-difference derivative,
/// as max over coordinates of |analytic - central| / (|central| + 1e-8).
pub fn rel_err(analytic: f64, central: f64) -> f64 {
    (analytic - central).abs() / (central.abs() + 1e-8)
}

/// Check the tape gradient of a scalar-valued function against central
/// finite differences at `x`. `build` receives a fresh tape and the leaf for
/// `x` and must return the scalar output node. Returns the max relative
/// error over all coordinates of `x`.
pub fn grad_check<F>(build: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, VarId) -> Result<VarId>,
{
    grad_check_coords(build, x, eps, None)
}

/// Like `grad_check` but probing only the listed coordinates (for large
/// parameter tensors where full finite differencing is wasteful).
pub fn grad_check_coords<F>(
    build: F,
    x: &Tensor,
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<f64>
where
    F: Fn(&mut Tape, VarId) -> Result<VarId>,
{
    if !x.is_finite() {
        return Err(Error::NonFinite("grad_check input".into()));
    }
    let eval = |xt: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(xt.clone());
        let out = build(&mut tape, leaf)?;
        if tape.value(out).numel() != 1 {
            return Err(Error::NonScalarOutput(tape.shape(out).to_vec()));
        }
        let y = tape.value(out).item();
        if !y.is_finite() {
            return Err(Error::NonFinite("grad_check output".into()));
        }
        Ok(y)
    };
    eval(x)?;

    // Analytic gradient once.
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = build(&mut tape, leaf)?;
    tape.backward(out)?;
    let analytic = tape.grad(leaf);

    let all: Vec<usize>;
    let idxs: &[usize] = match coords {
        Some(c) => c,
        None => {
            all = (0..x.numel()).collect();
            &all
        }
    };
    let mut worst = 0.0f64;
    for &i in idxs {
        let mut xp = x.clone();
        xp.data[i] += eps;
        let mut xm = x.clone();
        xm.data[i] -= eps;
        let central = (eval(&xp)? - eval(&xm)?) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.data[i], central));
    }
    Ok(worst)
}
