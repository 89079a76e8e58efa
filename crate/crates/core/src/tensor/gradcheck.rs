//! Central finite-difference gradient checking.
//!
//! The check only ever evaluates the forward function, so it stays independent
//! of the backward closures it validates.

use super::params::{Binder, ParamStore};
use super::tape::{Tape, Var};
use super::value::Tensor;
use crate::error::Result;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, REL_ERR_FLOOR)`.
    pub max_rel_err: f64,
    /// (input index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients of the scalar `f(inputs)` against central
/// differences with step `h`. At most `max_per_input` evenly spaced elements
/// of each input are perturbed (all when `None`).
pub fn check<F>(f: F, inputs: &[Tensor], h: f64, max_per_input: Option<usize>) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = max_per_input.map_or(1, |m| n.div_ceil(m.max(1)));
        for e in (0..n).step_by(stride) {
            let orig = input.data()[e];
            work[ii].data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work[ii].data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work[ii].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_err(analytic[ii][e], numeric);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (ii, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Gradient check over every parameter in `store` plus extra `inputs`.
///
/// `f` receives a binder whose parameters are the perturbed leaves. The
/// returned report's `worst.0` indexes parameters in name order first, then
/// the extra inputs.
pub fn check_with_params<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    h: f64,
    max_per_input: Option<usize>,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'s, 't> Fn(&Binder<'s, 't>, &[Var<'t>]) -> Result<Var<'t>>,
{
    let names: Vec<String> = store.names().cloned().collect();
    let np = names.len();
    let mut all: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
    all.extend_from_slice(inputs);
    let empty = ParamStore::new();
    check(
        |tape, vars| {
            let bind = Binder::preset(&empty, tape, names.iter().cloned().zip(vars[..np].iter().copied()));
            f(&bind, &vars[np..])
        },
        &all,
        h,
        max_per_input,
    )
}
