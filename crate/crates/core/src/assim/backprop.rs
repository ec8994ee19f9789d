use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{AnalysisResult, ObsOperator, WindowProblem};
use crate::ad::{value_grad_hessian, DEFAULT_DENSE_CAP};
use crate::error::{Error, Result};
use crate::integrate::Dynamics;
use crate::scalar::Scalar;
use crate::solvers::{bicgstab, BicgstabSettings};

/// Per-iteration step size `α_k = alpha0 · decayᵏ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub alpha0: f64,
    pub decay: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            decay: 0.5,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v <= 1.0;
        if !ok(self.alpha0) || !ok(self.decay) {
            return Err(Error::contract(format!(
                "learning rate {} and decay {} must lie in (0, 1]",
                self.alpha0, self.decay
            )));
        }
        Ok(())
    }
}

pub fn lr_value(lr: &LrSchedule, k: usize) -> f64 {
    lr.alpha0 * lr.decay.powi(k as i32)
}

/// How the Gauss–Newton Hessian is formed in Backprop-4DVar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    /// `B⁻¹ + H₀ᵀR⁻¹H₀`, with `H₀` the operator at the window's first step
    /// when it carries observations (otherwise only `B⁻¹`).
    Approximate,
    /// Full Hessian of the cost (reverse-over-reverse), unit step.
    Exact,
    /// `I`: plain gradient descent with step `α_k`.
    Identity,
}

/// Backprop-4DVar: `x ← x − α_k P⁻¹ ∇J(x)` from `x = x_b`, where the
/// gradient is backpropagated through the whole window.
pub fn backprop_4dvar<T, M>(
    prob: &WindowProblem<'_, T, M>,
    iterations: usize,
    lr: &LrSchedule,
    mode: HessianMode,
    inner: &BicgstabSettings,
) -> Result<AnalysisResult<T>>
where
    T: Scalar,
    M: Dynamics<T> + ?Sized,
{
    backprop_4dvar_capped(prob, iterations, lr, mode, inner, DEFAULT_DENSE_CAP)
}

pub fn backprop_4dvar_capped<T, M>(
    prob: &WindowProblem<'_, T, M>,
    iterations: usize,
    lr: &LrSchedule,
    mode: HessianMode,
    inner: &BicgstabSettings,
    dense_cap: usize,
) -> Result<AnalysisResult<T>>
where
    T: Scalar,
    M: Dynamics<T> + ?Sized,
{
    lr.validate()?;
    let start = Instant::now();
    let n = prob.dim();
    if mode == HessianMode::Exact && n > dense_cap {
        return Err(Error::Resource {
            dim: n,
            cap: dense_cap,
        });
    }
    let mut x = prob.background.clone();
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(iterations + 1);
    let mut cost_history = Vec::with_capacity(iterations + 1);
    let mut reports = Vec::new();
    let snapshot = |x: &[T]| x.iter().map(|v| v.as_f64()).collect::<Vec<_>>();
    let diverged = |iteration: usize, history: &[Vec<f64>]| Error::GradientDivergence {
        iteration,
        history: history.to_vec(),
    };
    let approx = approximate_hessian(prob);

    for k in 0..iterations {
        history.push(snapshot(&x));
        let step = match mode {
            HessianMode::Exact => {
                let (j, g, h) = match value_grad_hessian(|v| prob.cost_var(v), &x, dense_cap) {
                    Ok(v) => v,
                    Err(Error::NonFinite { .. }) => return Err(diverged(k, &history)),
                    Err(e) => return Err(e),
                };
                cost_history.push(j.as_f64());
                h.solve(&g)?
            }
            _ => {
                let (j, g) = match prob.value_and_grad(&x) {
                    Ok(v) => v,
                    Err(Error::NonFinite { .. }) => return Err(diverged(k, &history)),
                    Err(e) => return Err(e),
                };
                cost_history.push(j.as_f64());
                let alpha = T::lit(lr_value(lr, k));
                let mut d = match (mode, &approx) {
                    (HessianMode::Identity, _) => g,
                    (_, Precond::Diagonal(p)) => {
                        g.iter().zip(p).map(|(&gi, &pi)| gi / pi).collect()
                    }
                    (_, Precond::Operator { binv, h0, rinv0 }) => {
                        let map = h0.map();
                        let apply = |v: &[T]| -> Vec<T> {
                            let hv: Vec<T> = map
                                .apply_vec(v)
                                .iter()
                                .zip(rinv0)
                                .map(|(&a, &b)| a * b)
                                .collect();
                            let mut out = map.apply_adjoint_vec(&hv);
                            for ((o, &vi), &bi) in out.iter_mut().zip(v).zip(binv) {
                                *o += vi * bi;
                            }
                            out
                        };
                        let (d, report) = bicgstab(apply, &g, &vec![T::zero(); n], inner)?;
                        reports.push(report);
                        d
                    }
                };
                d.iter_mut().for_each(|v| *v *= alpha);
                d
            }
        };
        crate::scalar::axpy(-T::one(), &step, &mut x);
        if !crate::scalar::all_finite(&x) {
            history.push(snapshot(&x));
            return Err(diverged(k, &history));
        }
    }
    match prob.cost(&x) {
        Ok(j) if j.is_finite() => cost_history.push(j.as_f64()),
        _ => {
            history.push(snapshot(&x));
            return Err(diverged(iterations, &history));
        }
    }
    Ok(AnalysisResult {
        analysis: x,
        cost_history,
        wall_time: start.elapsed().as_secs_f64(),
        iterations,
        inner: reports,
    })
}

enum Precond<T: Scalar> {
    Diagonal(Vec<T>),
    Operator {
        binv: Vec<T>,
        h0: ObsOperator<T>,
        rinv0: Vec<T>,
    },
}

fn approximate_hessian<T: Scalar, M: ?Sized>(prob: &WindowProblem<'_, T, M>) -> Precond<T> {
    let binv = prob.b.inverse();
    let observed_at_start = prob.obs.times.first() == Some(&0) && !prob.obs.indices.is_empty();
    if !observed_at_start {
        return Precond::Diagonal(binv);
    }
    let rinv0 = prob.obs.noise.inverse();
    match &prob.h {
        ObsOperator::Selection(sel) => {
            let mut p = binv;
            for (&i, &r) in sel.indices().iter().zip(&rinv0) {
                p[i] += r;
            }
            Precond::Diagonal(p)
        }
        ObsOperator::Linear(_) => Precond::Operator {
            binv,
            h0: prob.h.clone(),
            rinv0,
        },
    }
}
