use std::time::Instant;

use super::{AnalysisResult, WindowProblem};
use crate::ad::{linearize, Var};
use crate::error::Result;
use crate::integrate::Dynamics;
use crate::scalar::Scalar;
use crate::solvers::{bicgstab, BicgstabSettings, LinearSolveReport};

/// Gauss–Newton step `r` from `FᵀF r = −Fᵀf`, touching the Jacobian `F` only
/// through `f_apply` (`v ↦ Fv`) and `ft_apply` (`w ↦ Fᵀw`). The caller
/// updates `x ← x + r`.
pub fn gauss_newton_residual<T, F, G>(
    mut f_apply: F,
    mut ft_apply: G,
    f_value: &[T],
    settings: &BicgstabSettings,
) -> Result<(Vec<T>, LinearSolveReport)>
where
    T: Scalar,
    F: FnMut(&[T]) -> Vec<T>,
    G: FnMut(&[T]) -> Vec<T>,
{
    let rhs: Vec<T> = ft_apply(f_value).into_iter().map(|v| -v).collect();
    let n = rhs.len();
    bicgstab(
        |v| ft_apply(&f_apply(v)),
        &rhs,
        &vec![T::zero(); n],
        settings,
    )
}

/// Stacked residual `f(x) = [B^{-1/2}(x − x_b); R^{-1/2}(H(x_t) − y_t)]`, so
/// that `J = ½‖f‖²`.
pub fn stacked_residual_var<'t, T: Scalar, M: Dynamics<T> + ?Sized>(
    prob: &WindowProblem<'_, T, M>,
    x0: Var<'t, T>,
) -> Var<'t, T> {
    let tape = x0.tape();
    let bg = (x0 - tape.constant(prob.background.clone())).mul_const(&prob.b.inv_sqrt());
    if prob.obs.is_empty() {
        return bg;
    }
    let w: Vec<T> = prob
        .obs
        .stacked_inverse()
        .iter()
        .map(|v| v.sqrt())
        .collect();
    let innov = (prob.obs_map_var(x0) - tape.constant(prob.obs.values.clone())).mul_const(&w);
    tape.concat(&[bg, innov])
}

/// Gauss–Newton iterations on the stacked residual.
pub fn gauss_newton_4dvar<T: Scalar, M: Dynamics<T> + ?Sized>(
    prob: &WindowProblem<'_, T, M>,
    iterations: usize,
    settings: &BicgstabSettings,
) -> Result<AnalysisResult<T>> {
    let start = Instant::now();
    let mut x = prob.background.clone();
    let mut cost_history = Vec::with_capacity(iterations + 1);
    let mut reports = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let lin = linearize(|v| stacked_residual_var(prob, v), &x)?;
        let f = lin.value().to_vec();
        cost_history.push(0.5 * f.iter().map(|v| v.as_f64().powi(2)).sum::<f64>());
        let (r, report) = gauss_newton_residual(
            |v| lin.jvp(v).expect("state-length tangent"),
            |w| lin.vjp(w).expect("residual-length cotangent"),
            &f,
            settings,
        )?;
        crate::scalar::axpy(T::one(), &r, &mut x);
        reports.push(report);
    }
    cost_history.push(prob.cost(&x)?.as_f64());
    Ok(AnalysisResult {
        analysis: x,
        cost_history,
        wall_time: start.elapsed().as_secs_f64(),
        iterations,
        inner: reports,
    })
}
