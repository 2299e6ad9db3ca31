//! Central finite-difference gradient checks, used to validate the tape
//! against an independent numerical derivative.

use super::graph::{Graph, Var};
use super::param::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor of `1e-3` on the scale, so gradients near
/// zero are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element `i`.
pub fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> Result<f64>) -> Result<Vec<f64>> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += FD_STEP;
            let mut minus = x.clone();
            minus.data_mut()[i] -= FD_STEP;
            Ok((f(&plus)? - f(&minus)?) / (2.0 * FD_STEP))
        })
        .collect()
}

/// Worst relative error between tape gradients and central differences
/// over every parameter of `params`, for a scalar `loss`.
pub fn param_grad_error(
    params: &ParamSet,
    loss: &dyn Fn(&mut Graph, &ParamSet) -> Result<Var>,
) -> Result<f64> {
    let mut params = params.clone();
    params.zero_grad();
    let mut g = Graph::new();
    let l = loss(&mut g, &params)?;
    g.backward_into(l, &mut params)?;
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss(&mut g, p)?;
        let v = g.value(l).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss is {v}")));
        }
        Ok(v)
    };
    let mut worst: f64 = 0.0;
    for slot in 0..params.len() {
        let analytic = params.get(slot).grad.data().to_vec();
        let numeric = numeric_grad(&params.get(slot).value, &|v| {
            let mut p = params.clone();
            p.get_mut(slot).value = v.clone();
            eval(&p)
        })?;
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    Ok(worst)
}

/// Worst relative error for the gradient with respect to an input tensor.
pub fn input_grad_error(x0: &Tensor, loss: &dyn Fn(&mut Graph, Var) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(x0.clone());
    let l = loss(&mut g, x)?;
    let grads = g.backward(l)?;
    let analytic = grads.get(x).ok_or_else(|| Error::Graph("input has no gradient".into()))?.data().to_vec();
    let numeric = numeric_grad(x0, &|xt| {
        let mut g = Graph::new();
        let x = g.input(xt.clone());
        let l = loss(&mut g, x)?;
        g.value(l).item()
    })?;
    Ok(analytic.iter().zip(&numeric).map(|(a, n)| rel_err(*a, *n)).fold(0.0, f64::max))
}
