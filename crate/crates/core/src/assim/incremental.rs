use std::time::Instant;

use super::{AnalysisResult, ObsOperator, WindowProblem};
use crate::ad::{linearize, Linearization};
use crate::error::{Error, Result};
use crate::integrate::{Dynamics, Integrator};
use crate::models::{L96Tangent, Lorenz96};
use crate::scalar::Scalar;
use crate::solvers::{bicgstab, BicgstabSettings};

/// The window's observation map `g(x₀) = [H(M_t(x₀))]_t` linearised about
/// an outer-loop iterate.
pub trait ObsLinearization<T: Scalar> {
    /// `g(x₀)`.
    fn value(&self) -> &[T];
    /// `G δx`.
    fn tangent(&self, dx: &[T]) -> Result<Vec<T>>;
    /// `Gᵀ w`.
    fn adjoint(&self, w: &[T]) -> Result<Vec<T>>;
}

/// Source of tangent-linear and adjoint models for incremental 4D-Var.
pub trait Linearizer<T: Scalar, M: ?Sized>: Sync {
    fn linearize<'a>(
        &self,
        prob: &'a WindowProblem<'_, T, M>,
        x0: &[T],
    ) -> Result<Box<dyn ObsLinearization<T> + 'a>>;
}

/// Tangent and adjoint from the autodiff tape (JVP/VJP of the recorded
/// observation map).
#[derive(Clone, Copy, Debug, Default)]
pub struct AutodiffLinearizer;

struct TapeLinearization<T: Scalar>(Linearization<T>);

impl<T: Scalar> ObsLinearization<T> for TapeLinearization<T> {
    fn value(&self) -> &[T] {
        self.0.value()
    }
    fn tangent(&self, dx: &[T]) -> Result<Vec<T>> {
        self.0.jvp(dx)
    }
    fn adjoint(&self, w: &[T]) -> Result<Vec<T>> {
        self.0.vjp(w)
    }
}

impl<T: Scalar, M: Dynamics<T> + ?Sized> Linearizer<T, M> for AutodiffLinearizer {
    fn linearize<'a>(
        &self,
        prob: &'a WindowProblem<'_, T, M>,
        x0: &[T],
    ) -> Result<Box<dyn ObsLinearization<T> + 'a>> {
        let lin = linearize(|x| prob.obs_map_var(x), x0)?;
        Ok(Box::new(TapeLinearization(lin)))
    }
}

/// Hand-coded Lorenz-96 tangent-linear and adjoint models.
#[derive(Clone, Copy, Debug, Default)]
pub struct L96AnalyticLinearizer;

struct L96Linearization<T: Scalar> {
    tangent: L96Tangent<T>,
    h: ObsOperator<T>,
    times: Vec<usize>,
    value: Vec<T>,
}

impl<T: Scalar> ObsLinearization<T> for L96Linearization<T> {
    fn value(&self) -> &[T] {
        &self.value
    }
    fn tangent(&self, dx: &[T]) -> Result<Vec<T>> {
        let tl = self.tangent.tangent(dx)?;
        let h = self.h.map();
        Ok(self
            .times
            .iter()
            .flat_map(|&t| h.apply_vec(tl.state(t)))
            .collect())
    }
    fn adjoint(&self, w: &[T]) -> Result<Vec<T>> {
        let h = self.h.map();
        let m = h.output_len();
        crate::error::check_len("adjoint weights", self.times.len() * m, w.len())?;
        let forcings: Vec<(usize, Vec<T>)> = self
            .times
            .iter()
            .zip(w.chunks(m.max(1)))
            .map(|(&t, wt)| (t, h.apply_adjoint_vec(wt)))
            .collect();
        self.tangent.adjoint(&forcings)
    }
}

impl<T: Scalar> Linearizer<T, Integrator<Lorenz96<T>>> for L96AnalyticLinearizer {
    fn linearize<'a>(
        &self,
        prob: &'a WindowProblem<'_, T, Integrator<Lorenz96<T>>>,
        x0: &[T],
    ) -> Result<Box<dyn ObsLinearization<T> + 'a>> {
        let tangent = L96Tangent::new(prob.model, x0, prob.obs.last_time())?;
        let h = prob.h.map();
        let value = prob
            .obs
            .times
            .iter()
            .flat_map(|&t| h.apply_vec(tangent.trajectory().state(t)))
            .collect();
        Ok(Box::new(L96Linearization {
            tangent,
            h: prob.h.clone(),
            times: prob.obs.times.clone(),
            value,
        }))
    }
}

/// Incremental 4D-Var: each outer loop linearises about the current iterate
/// and solves `(B⁻¹ + GᵀR⁻¹G) δx = B⁻¹(x_b − x) + GᵀR⁻¹d` with BiCGSTAB.
pub fn incremental_4dvar<T, M, L>(
    prob: &WindowProblem<'_, T, M>,
    outer_loops: usize,
    inner: &BicgstabSettings,
    linearizer: &L,
) -> Result<AnalysisResult<T>>
where
    T: Scalar,
    M: Dynamics<T> + ?Sized,
    L: Linearizer<T, M> + ?Sized,
{
    let start = Instant::now();
    let n = prob.dim();
    let binv = prob.b.inverse();
    let rinv = prob.obs.stacked_inverse();
    let mut x = prob.background.clone();
    let mut cost_history = Vec::with_capacity(outer_loops + 1);
    let mut reports = Vec::with_capacity(outer_loops);
    for k in 0..outer_loops {
        let wrap = |e: Error| Error::OuterLoop {
            outer: k,
            source: Box::new(e),
        };
        let lin = linearizer.linearize(prob, &x).map_err(wrap)?;
        let g = lin.value();
        let jb = x
            .iter()
            .zip(&prob.background)
            .zip(&binv)
            .map(|((&xi, &bi), &w)| (xi - bi) * (xi - bi) * w)
            .sum::<T>()
            * T::lit(0.5);
        cost_history.push((jb + prob.obs_cost(g)).as_f64());

        let weighted_innov: Vec<T> = prob
            .obs
            .values
            .iter()
            .zip(g)
            .zip(&rinv)
            .map(|((&y, &gi), &w)| (y - gi) * w)
            .collect();
        let mut rhs = lin.adjoint(&weighted_innov).map_err(wrap)?;
        for ((r, (&xb, &xi)), &w) in rhs
            .iter_mut()
            .zip(prob.background.iter().zip(&x))
            .zip(&binv)
        {
            *r += (xb - xi) * w;
        }
        let apply = |v: &[T]| -> Vec<T> {
            let gv = lin.tangent(v).expect("tangent input has state length");
            let w: Vec<T> = gv.iter().zip(&rinv).map(|(&a, &b)| a * b).collect();
            let mut out = lin
                .adjoint(&w)
                .expect("adjoint input has observation length");
            for ((o, &vi), &bi) in out.iter_mut().zip(v).zip(&binv) {
                *o += vi * bi;
            }
            out
        };
        let (dx, report) = bicgstab(apply, &rhs, &vec![T::zero(); n], inner).map_err(wrap)?;
        crate::scalar::axpy(T::one(), &dx, &mut x);
        reports.push(report);
    }
    cost_history.push(prob.cost(&x)?.as_f64());
    Ok(AnalysisResult {
        analysis: x,
        cost_history,
        wall_time: start.elapsed().as_secs_f64(),
        iterations: outer_loops,
        inner: reports,
    })
}
