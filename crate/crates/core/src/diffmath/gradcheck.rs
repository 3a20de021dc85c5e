//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward closure, so it stays
//! independent of the backward implementation it is checking.

use crate::error::{Error, Result};

use super::{Graph, Tensor, Var};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` where the maximum was observed.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Relative error with a small floor on the denominator, so that entries
/// where both gradients are essentially zero compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

fn eval<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar output, got {:?}",
            v.shape()
        )));
    }
    Ok(v.values()[0])
}

/// Analytic gradients of `f` at `inputs`, one flat vector per input.
pub fn analytic_grads<F>(inputs: &[Tensor], f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect())
}

/// Central-difference gradients of `f` at `inputs` with step `eps`.
pub fn numeric_grads<F>(inputs: &[Tensor], eps: f64, f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grads = vec![0.0; inputs[i].numel()];
        for (e, slot) in grads.iter_mut().enumerate() {
            let orig = work[i].values()[e];
            work[i].values_mut()[e] = orig + eps;
            let up = eval(&work, f)?;
            work[i].values_mut()[e] = orig - eps;
            let down = eval(&work, f)?;
            work[i].values_mut()[e] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        out.push(grads);
    }
    Ok(out)
}

/// Compares analytic and central-difference gradients of the scalar `f`.
pub fn check<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grads(inputs, &f)?;
    let numeric = numeric_grads(inputs, eps, &f)?;
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (e, (&av, &nv)) in a.iter().zip(n).enumerate() {
            let err = relative_error(av, nv);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, e);
            }
        }
    }
    Ok(report)
}
