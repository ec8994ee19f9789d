//! Matrix-free BiCGSTAB.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::{axpy, dot, norm2, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSolveReport {
    pub iterations: usize,
    /// `‖b − A x‖` of the returned iterate.
    pub final_residual_norm: f64,
    pub converged: bool,
}

/// Stopping rule for the inner solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicgstabSettings {
    /// Relative tolerance on `‖b − A x‖ / ‖b‖`.
    pub tol: f64,
    /// Iteration cap; `None` means ten times the system dimension.
    pub max_iter: Option<usize>,
}

impl Default for BicgstabSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
        }
    }
}

impl BicgstabSettings {
    pub fn cap(&self, dim: usize) -> usize {
        self.max_iter.unwrap_or(10 * dim).max(1)
    }
}

/// Left preconditioner `M⁻¹`. The solver only ever calls `apply`.
pub trait Preconditioner<T: Scalar> {
    fn apply(&self, r: &[T]) -> Vec<T>;
}

pub struct IdentityPreconditioner;

impl<T: Scalar> Preconditioner<T> for IdentityPreconditioner {
    fn apply(&self, r: &[T]) -> Vec<T> {
        r.to_vec()
    }
}

/// Solves `A x = b` touching `A` only through `apply_a`.
pub fn bicgstab<T, F>(
    apply_a: F,
    b: &[T],
    x0: &[T],
    settings: &BicgstabSettings,
) -> Result<(Vec<T>, LinearSolveReport)>
where
    T: Scalar,
    F: FnMut(&[T]) -> Vec<T>,
{
    bicgstab_preconditioned(apply_a, &IdentityPreconditioner, b, x0, settings)
}

pub fn bicgstab_preconditioned<T, F, P>(
    mut apply_a: F,
    precond: &P,
    b: &[T],
    x0: &[T],
    settings: &BicgstabSettings,
) -> Result<(Vec<T>, LinearSolveReport)>
where
    T: Scalar,
    F: FnMut(&[T]) -> Vec<T>,
    P: Preconditioner<T> + ?Sized,
{
    let n = b.len();
    check_len("bicgstab initial guess", n, x0.len())?;
    if !(settings.tol > 0.0) {
        return Err(Error::contract("bicgstab tolerance must be positive"));
    }
    let tol = T::lit(settings.tol);
    let max_iter = settings.cap(n);

    let mut op = |v: &[T]| -> Result<Vec<T>> {
        let out = apply_a(v);
        check_len("bicgstab operator output", n, out.len())?;
        Ok(precond.apply(&out))
    };
    let pb = precond.apply(b);
    let pb_norm = norm2(&pb);
    let pb_minus = |ax: &[T]| -> Vec<T> { pb.iter().zip(ax).map(|(&bi, &ai)| bi - ai).collect() };
    let true_residual =
        |apply: &mut dyn FnMut(&[T]) -> Result<Vec<T>>, x: &[T]| -> Result<Vec<T>> {
            let ax = apply(x)?;
            Ok(pb_minus(&ax))
        };

    let mut x = x0.to_vec();
    if pb_norm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok((
            x,
            LinearSolveReport {
                iterations: 0,
                final_residual_norm: 0.0,
                converged: true,
            },
        ));
    }
    let target = tol * pb_norm;

    let mut r = {
        let ax = op(&x)?;
        pb_minus(&ax)
    };
    let mut r_norm = norm2(&r);
    let mut best = (r_norm, x.clone());
    if r_norm <= target {
        return Ok((x, report(0, r_norm, true)));
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (T::one(), T::one(), T::one());
    let mut v = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];
    let tiny = T::min_positive_value().sqrt();

    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() <= tiny * r_norm * norm2(&r_hat) {
            return Err(Error::Breakdown {
                reason: "rho vanished",
                report: report(it - 1, best.0, false),
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for ((pi, &ri), &vi) in p.iter_mut().zip(&r).zip(&v) {
            *pi = ri + beta * (*pi - omega * vi);
        }
        v = op(&p)?;
        let rv = dot(&r_hat, &v);
        if rv == T::zero() || !rv.is_finite() {
            return Err(Error::Breakdown {
                reason: "r̂·v vanished",
                report: report(it - 1, best.0, false),
            });
        }
        alpha = rho / rv;
        let mut s = r.clone();
        axpy(-alpha, &v, &mut s);
        let s_norm = norm2(&s);
        if s_norm <= target {
            let mut candidate = x.clone();
            axpy(alpha, &p, &mut candidate);
            let res = true_residual(&mut op, &candidate)?;
            let res_norm = norm2(&res);
            if res_norm <= target {
                return Ok((candidate, report(it, res_norm, true)));
            }
        }
        let t = op(&s)?;
        let tt = dot(&t, &t);
        if tt == T::zero() {
            return Err(Error::Breakdown {
                reason: "t vanished",
                report: report(it, best.0, false),
            });
        }
        omega = dot(&t, &s) / tt;
        if omega == T::zero() || !omega.is_finite() {
            return Err(Error::Breakdown {
                reason: "omega vanished",
                report: report(it, best.0, false),
            });
        }
        axpy(alpha, &p, &mut x);
        axpy(omega, &s, &mut x);
        r = s;
        axpy(-omega, &t, &mut r);
        r_norm = norm2(&r);
        if r_norm < best.0 {
            best = (r_norm, x.clone());
        }
        if r_norm <= target {
            // The recursively updated residual can drift from b − Ax.
            r = true_residual(&mut op, &x)?;
            r_norm = norm2(&r);
            if r_norm <= target {
                return Ok((x, report(it, r_norm, true)));
            }
        }
    }
    let (res_norm, x_best) = best;
    Ok((x_best, report(max_iter, res_norm, false)))
}

fn report<T: Scalar>(iterations: usize, residual: T, converged: bool) -> LinearSolveReport {
    LinearSolveReport {
        iterations,
        final_residual_norm: residual.as_f64(),
        converged,
    }
}
