//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of [`fd_check`].
#[derive(Debug, Clone)]
pub struct FdReport {
    /// `max |analytic - numeric| / (|numeric| + 1e-12)` over every parameter entry.
    pub max_rel_error: f64,
    /// `(tensor index, element index)` where the maximum occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub evaluations: usize,
}

pub const MIN_STEP: f64 = 1e-7;
pub const MAX_STEP: f64 = 1e-3;

/// Compares reverse-mode gradients of a scalar function against central
/// differences with the given `step`.
///
/// `f` receives a fresh graph and one parameter leaf per tensor in
/// `params`, and must return a scalar node.
pub fn fd_check<F>(f: F, params: &[Tensor], step: f64) -> Result<FdReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(MIN_STEP..=MAX_STEP).contains(&step) {
        return Err(Error::Contract(format!(
            "finite-difference step {step} outside [{MIN_STEP}, {MAX_STEP}]"
        )));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.scalar(root))
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        evaluations: 0,
    };
    for ti in 0..work.len() {
        for ei in 0..work[ti].len() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + step;
            let plus = eval(&work)?;
            work[ti].data_mut()[ei] = orig - step;
            let minus = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            report.evaluations += 2;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at perturbed parameter {ti}[{ei}]: f+ = {plus}, f- = {minus}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[ti].data()[ei];
            let rel = (a - numeric).abs() / (numeric.abs() + 1e-12);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (ti, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
