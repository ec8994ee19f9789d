//! Lorenz-96: `du_k/dt = u_{k−1}(u_{k+1} − u_{k−2}) − u_k + F` on a ring.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ad::{CyclicShift, LinearMap, SharedMap, Var};
use crate::error::{check_len, Error, Result};
use crate::integrate::{Integrator, Scheme, Tableau, Tendency};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lorenz96Params {
    pub dim: usize,
    pub forcing: f64,
}

impl Default for Lorenz96Params {
    fn default() -> Self {
        Self {
            dim: 36,
            forcing: 8.0,
        }
    }
}

impl Lorenz96Params {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::contract(format!(
                "Lorenz-96 needs at least 4 grid points, got {}",
                self.dim
            )));
        }
        if !self.forcing.is_finite() {
            return Err(Error::contract("Lorenz-96 forcing must be finite"));
        }
        Ok(())
    }
}

/// Differentiable Lorenz-96 tendency.
pub struct Lorenz96<T: Scalar> {
    params: Lorenz96Params,
    plus1: SharedMap<T>,
    minus1: SharedMap<T>,
    minus2: SharedMap<T>,
}

impl<T: Scalar> Lorenz96<T> {
    pub fn new(params: Lorenz96Params) -> Result<Self> {
        params.validate()?;
        let n = params.dim;
        Ok(Self {
            params,
            plus1: Arc::new(CyclicShift::new(n, 1)),
            minus1: Arc::new(CyclicShift::new(n, -1)),
            minus2: Arc::new(CyclicShift::new(n, -2)),
        })
    }

    pub fn params(&self) -> Lorenz96Params {
        self.params
    }

    /// The standard configuration: fixed-step Dormand–Prince at `dt`.
    pub fn integrator(params: Lorenz96Params, dt: f64) -> Result<Integrator<Self>> {
        Integrator::new(Self::new(params)?, Scheme::Dopri5, dt)
    }
}

impl<T: Scalar> Tendency<T> for Lorenz96<T> {
    fn dim(&self) -> usize {
        self.params.dim
    }

    fn eval<'t>(&self, u: Var<'t, T>) -> Var<'t, T> {
        let adv = (u.apply(&self.plus1) - u.apply(&self.minus2)) * u.apply(&self.minus1);
        adv - u + T::lit(self.params.forcing)
    }
}

/// Plain numeric tendency.
pub fn l96_tendency<T: Scalar>(u: &[T], forcing: T) -> Result<Vec<T>> {
    let n = u.len();
    if n < 4 {
        return Err(Error::contract(format!(
            "Lorenz-96 needs at least 4 grid points, got {n}"
        )));
    }
    Ok((0..n)
        .map(|k| {
            let (kp1, km1, km2) = ((k + 1) % n, (k + n - 1) % n, (k + n - 2) % n);
            (u[kp1] - u[km2]) * u[km1] - u[k] + forcing
        })
        .collect())
}

/// Jacobian of the tendency at `u` applied to `v`.
fn tendency_tangent<T: Scalar>(u: &[T], v: &[T], out: &mut [T]) {
    let n = u.len();
    for k in 0..n {
        let (kp1, km1, km2) = ((k + 1) % n, (k + n - 1) % n, (k + n - 2) % n);
        out[k] = (v[kp1] - v[km2]) * u[km1] + (u[kp1] - u[km2]) * v[km1] - v[k];
    }
}

/// Transposed Jacobian of the tendency at `u`, accumulated into `out`.
fn tendency_adjoint_acc<T: Scalar>(u: &[T], w: &[T], out: &mut [T]) {
    let n = u.len();
    for k in 0..n {
        let (kp1, km1, km2) = ((k + 1) % n, (k + n - 1) % n, (k + n - 2) % n);
        let wk = w[k];
        out[kp1] += wk * u[km1];
        out[km2] -= wk * u[km1];
        out[km1] += wk * (u[kp1] - u[km2]);
        out[k] -= wk;
    }
}

/// Hand-coded tangent-linear and adjoint models of an explicit Runge–Kutta
/// Lorenz-96 integration, stored as the stage states of the nonlinear run.
pub struct L96Tangent<T> {
    dim: usize,
    dt: T,
    tableau: Tableau,
    /// `stages[step][i]` is the argument of the `i`-th tendency evaluation.
    stages: Vec<Vec<Vec<T>>>,
    trajectory: Trajectory<T>,
}

impl<T: Scalar> L96Tangent<T> {
    /// Runs the nonlinear model for `n_steps` from `x0`, keeping what the
    /// linearisation needs.
    pub fn new(integrator: &Integrator<Lorenz96<T>>, x0: &[T], n_steps: usize) -> Result<Self> {
        let params = integrator.tendency().params();
        check_len("Lorenz-96 initial state", params.dim, x0.len())?;
        if integrator.scheme() == Scheme::Ab3 {
            return Err(Error::contract(
                "analytic Lorenz-96 tangent model supports Runge–Kutta schemes only",
            ));
        }
        let tableau = integrator.tableau().clone();
        let forcing = T::lit(params.forcing);
        let dt = T::lit(integrator.dt());
        let mut trajectory = Trajectory::with_capacity(params.dim, n_steps + 1);
        trajectory.push(x0)?;
        let mut stages = Vec::with_capacity(n_steps);
        let mut x = x0.to_vec();
        for step in 0..n_steps {
            let mut ks: Vec<Vec<T>> = Vec::with_capacity(tableau.stages());
            let mut args = Vec::with_capacity(tableau.stages());
            for row in &tableau.a {
                let mut arg = x.clone();
                for (k, &a) in ks.iter().zip(row) {
                    if a != 0.0 {
                        let c = dt * T::lit(a);
                        arg.iter_mut().zip(k).for_each(|(y, &kv)| *y = *y + kv * c);
                    }
                }
                ks.push(l96_tendency(&arg, forcing)?);
                args.push(arg);
            }
            for (k, &b) in ks.iter().zip(&tableau.b) {
                if b != 0.0 {
                    let c = dt * T::lit(b);
                    x.iter_mut().zip(k).for_each(|(y, &kv)| *y = *y + kv * c);
                }
            }
            if !crate::scalar::all_finite(&x) {
                return Err(Error::Divergence { step: step + 1 });
            }
            trajectory.push(&x)?;
            stages.push(args);
        }
        Ok(Self {
            dim: params.dim,
            dt,
            tableau,
            stages,
            trajectory,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.stages.len()
    }

    /// Nonlinear states `x_0 … x_n`.
    pub fn trajectory(&self) -> &Trajectory<T> {
        &self.trajectory
    }

    fn tangent_step(&self, step: usize, dx: &[T]) -> Vec<T> {
        let n = self.dim;
        let mut dks: Vec<Vec<T>> = Vec::with_capacity(self.tableau.stages());
        for (row, y) in self.tableau.a.iter().zip(&self.stages[step]) {
            let mut darg = dx.to_vec();
            for (dk, &a) in dks.iter().zip(row) {
                if a != 0.0 {
                    crate::scalar::axpy(self.dt * T::lit(a), dk, &mut darg);
                }
            }
            let mut dk = vec![T::zero(); n];
            tendency_tangent(y, &darg, &mut dk);
            dks.push(dk);
        }
        let mut out = dx.to_vec();
        for (dk, &b) in dks.iter().zip(&self.tableau.b) {
            if b != 0.0 {
                crate::scalar::axpy(self.dt * T::lit(b), dk, &mut out);
            }
        }
        out
    }

    fn adjoint_step(&self, step: usize, lambda: &[T]) -> Vec<T> {
        let n = self.dim;
        let s = self.tableau.stages();
        let mut out = lambda.to_vec();
        let mut lk: Vec<Vec<T>> = self
            .tableau
            .b
            .iter()
            .map(|&b| lambda.iter().map(|&l| l * self.dt * T::lit(b)).collect())
            .collect();
        for i in (0..s).rev() {
            let mut ly = vec![T::zero(); n];
            tendency_adjoint_acc(&self.stages[step][i], &lk[i], &mut ly);
            crate::scalar::axpy(T::one(), &ly, &mut out);
            for (j, &a) in self.tableau.a[i].iter().enumerate() {
                if a != 0.0 {
                    crate::scalar::axpy(self.dt * T::lit(a), &ly, &mut lk[j]);
                }
            }
        }
        out
    }

    /// Tangent-linear propagation of `dx0`: perturbations at steps `0 … n`.
    pub fn tangent(&self, dx0: &[T]) -> Result<Trajectory<T>> {
        check_len("tangent perturbation", self.dim, dx0.len())?;
        let mut out = Trajectory::with_capacity(self.dim, self.n_steps() + 1);
        out.push(dx0)?;
        let mut dx = dx0.to_vec();
        for step in 0..self.n_steps() {
            dx = self.tangent_step(step, &dx);
            out.push(&dx)?;
        }
        Ok(out)
    }

    /// `Σ_t M_{0→t}ᵀ λ_t` for sensitivities `λ_t` attached at steps `t`.
    pub fn adjoint(&self, forcings: &[(usize, Vec<T>)]) -> Result<Vec<T>> {
        let mut lambda = vec![T::zero(); self.dim];
        let mut by_step: Vec<Option<&Vec<T>>> = vec![None; self.n_steps() + 1];
        for (t, f) in forcings {
            if *t > self.n_steps() {
                return Err(Error::contract(format!(
                    "adjoint forcing at step {t} beyond {} steps",
                    self.n_steps()
                )));
            }
            check_len("adjoint forcing", self.dim, f.len())?;
            if by_step[*t].is_some() {
                return Err(Error::contract(format!(
                    "duplicate adjoint forcing at step {t}"
                )));
            }
            by_step[*t] = Some(f);
        }
        for t in (0..=self.n_steps()).rev() {
            if let Some(f) = by_step[t] {
                crate::scalar::axpy(T::one(), f, &mut lambda);
            }
            if t > 0 {
                lambda = self.adjoint_step(t - 1, &lambda);
            }
        }
        Ok(lambda)
    }

    /// Matrix-free propagator `M_{0→n}` as a linear map; its adjoint is the
    /// adjoint model.
    pub fn propagator(self: &Arc<Self>) -> SharedMap<T>
    where
        T: Scalar,
    {
        Arc::new(Propagator(self.clone()))
    }

    /// Dense `M_{0→n}`, column by column through the tangent model.
    pub fn propagator_dense(&self) -> DenseMatrix<T> {
        let n = self.dim;
        let mut m = DenseMatrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = self.tangent(&e).expect("shape checked");
            for (i, &v) in col.last().unwrap().iter().enumerate() {
                m[(i, j)] = v;
            }
            e[j] = T::zero();
        }
        m
    }
}

struct Propagator<T>(Arc<L96Tangent<T>>);

impl<T: Scalar> LinearMap<T> for Propagator<T> {
    fn input_len(&self) -> usize {
        self.0.dim
    }
    fn output_len(&self) -> usize {
        self.0.dim
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        let tl = self.0.tangent(x).expect("propagator input length");
        out.copy_from_slice(tl.last().unwrap());
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        let adj = self
            .0
            .adjoint(&[(self.0.n_steps(), y.to_vec())])
            .expect("propagator output length");
        out.copy_from_slice(&adj);
    }
    fn name(&self) -> &'static str {
        "l96-propagator"
    }
}
