//! Central finite-difference gradient checking.

use crate::error::AutodiffError;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// `max |analytic - numeric| / (|analytic| + 1e-12)` over all coordinates.
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` attaining the maximum.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).item()
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `eps` at every coordinate of `params`.
///
/// `f` must build the same computation each time it is called (fix any
/// random draws by seed).
pub fn finite_diff_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<FdReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.grad(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut work = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for c in 0..param.len() {
            let original = param.data()[c];
            work[pi].data_mut()[c] = original + eps;
            let plus = evaluate(&f, &work);
            work[pi].data_mut()[c] = original - eps;
            let minus = evaluate(&f, &work);
            work[pi].data_mut()[c] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(AutodiffError::NonFiniteAt {
                    param: pi,
                    coord: c,
                });
            }
            let a = analytic[pi].data()[c];
            let rel = (a - numeric).abs() / (a.abs() + 1e-12);
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((pi, c));
            }
        }
    }
    Ok(report)
}
