//! Explicit time integrators, recorded on the autodiff tape.

use serde::{Deserialize, Serialize};

use crate::ad::{SharedMap, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

/// Right-hand side `dx/dt = f(x)` of an autonomous system.
pub trait Tendency<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn eval<'t>(&self, x: Var<'t, T>) -> Var<'t, T>;

    /// Linear operation applied to the state after each completed step
    /// (a spectral dissipation filter, say). Identity by default.
    fn post_step<'t>(&self, x: Var<'t, T>) -> Var<'t, T> {
        x
    }
}

impl<T: Scalar, F: Tendency<T> + ?Sized> Tendency<T> for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval<'t>(&self, x: Var<'t, T>) -> Var<'t, T> {
        (**self).eval(x)
    }
    fn post_step<'t>(&self, x: Var<'t, T>) -> Var<'t, T> {
        (**self).post_step(x)
    }
}

/// A forecast model usable inside a data-assimilation window.
pub trait Dynamics<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    /// Recorded rollout: `n + 1` states starting with `x0`.
    fn rollout_var<'t>(&self, x0: Var<'t, T>, n: usize) -> Vec<Var<'t, T>>;

    /// Numeric forecast: `n + 1` states starting with `x0`.
    fn forecast(&self, x0: &[T], n: usize) -> Result<Trajectory<T>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Rk4,
    /// Dormand–Prince 5(4) run at a fixed step with the fifth-order weights.
    #[serde(rename = "dopri5-fixed")]
    Dopri5,
    /// Third-order Adams–Bashforth, started with two RK4 steps.
    Ab3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub dt: f64,
    pub n_steps: usize,
}

impl IntegratorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::contract("integrator dt must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::contract("integrator needs at least one step"));
        }
        Ok(())
    }
}

/// Explicit Runge–Kutta coefficients.
#[derive(Clone, Debug)]
pub struct Tableau {
    /// Strictly lower-triangular stage coefficients, `a[i]` has `i` entries.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Tableau {
    pub fn rk4() -> Self {
        Self {
            a: vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        }
    }

    /// Dormand–Prince fifth-order solution. The seventh (FSAL) stage only
    /// feeds the error estimate and has zero weight here, so it is dropped.
    pub fn dopri5() -> Self {
        Self {
            a: vec![
                vec![],
                vec![1.0 / 5.0],
                vec![3.0 / 40.0, 9.0 / 40.0],
                vec![44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
                vec![
                    19372.0 / 6561.0,
                    -25360.0 / 2187.0,
                    64448.0 / 6561.0,
                    -212.0 / 729.0,
                ],
                vec![
                    9017.0 / 3168.0,
                    -355.0 / 33.0,
                    46732.0 / 5247.0,
                    49.0 / 176.0,
                    -5103.0 / 18656.0,
                ],
            ],
            b: vec![
                35.0 / 384.0,
                0.0,
                500.0 / 1113.0,
                125.0 / 192.0,
                -2187.0 / 6784.0,
                11.0 / 84.0,
            ],
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

const AB3: [f64; 3] = [23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0];

/// Tendency plus time-stepping scheme: a differentiable forecast model.
#[derive(Clone, Debug)]
pub struct Integrator<F> {
    tendency: F,
    scheme: Scheme,
    dt: f64,
    tableau: Tableau,
}

impl<F> Integrator<F> {
    pub fn new(tendency: F, scheme: Scheme, dt: f64) -> Result<Self> {
        IntegratorSpec {
            scheme,
            dt,
            n_steps: 1,
        }
        .validate()?;
        let tableau = match scheme {
            Scheme::Dopri5 => Tableau::dopri5(),
            Scheme::Rk4 | Scheme::Ab3 => Tableau::rk4(),
        };
        Ok(Self {
            tendency,
            scheme,
            dt,
            tableau,
        })
    }

    pub fn tendency(&self) -> &F {
        &self.tendency
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The Runge–Kutta tableau used for single steps (and AB3 startup).
    pub fn tableau(&self) -> &Tableau {
        &self.tableau
    }
}

impl<F> Integrator<F> {
    /// One explicit Runge–Kutta step, without the post-step hook.
    fn rk_stage_sum<'t, T: Scalar>(&self, f: &F, x: Var<'t, T>) -> Var<'t, T>
    where
        F: Tendency<T>,
    {
        let dt = T::lit(self.dt);
        let mut ks: Vec<Var<'t, T>> = Vec::with_capacity(self.tableau.stages());
        for row in &self.tableau.a {
            let mut arg = x;
            for (k, &a) in ks.iter().zip(row) {
                if a != 0.0 {
                    arg = arg + *k * (dt * T::lit(a));
                }
            }
            ks.push(f.eval(arg));
        }
        let mut next = x;
        for (k, &b) in ks.iter().zip(&self.tableau.b) {
            if b != 0.0 {
                next = next + *k * (dt * T::lit(b));
            }
        }
        next
    }
}

impl<F> Integrator<F> {
    /// One recorded Runge–Kutta step (RK4 for the AB3 scheme), including the
    /// post-step hook.
    pub fn step_var<'t, T: Scalar>(&self, x: Var<'t, T>) -> Var<'t, T>
    where
        F: Tendency<T>,
    {
        let next = self.rk_stage_sum(&self.tendency, x);
        self.tendency.post_step(next)
    }

    fn ab3_var<'t, T: Scalar>(
        &self,
        x: Var<'t, T>,
        f0: Var<'t, T>,
        f1: Var<'t, T>,
        f2: Var<'t, T>,
    ) -> Var<'t, T>
    where
        F: Tendency<T>,
    {
        let dt = T::lit(self.dt);
        let incr =
            f0 * (dt * T::lit(AB3[0])) + f1 * (dt * T::lit(AB3[1])) + f2 * (dt * T::lit(AB3[2]));
        self.tendency.post_step(x + incr)
    }

    /// Numeric single step.
    pub fn step<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>>
    where
        F: Tendency<T>,
    {
        let tape = Tape::new();
        let next = self.step_var(tape.constant(x.to_vec()));
        tape.check_finite()
            .map_err(|_| Error::Divergence { step: 1 })?;
        Ok(next.value())
    }
}

impl<T: Scalar, F: Tendency<T>> Dynamics<T> for Integrator<F> {
    fn dim(&self) -> usize {
        self.tendency.dim()
    }

    fn rollout_var<'t>(&self, x0: Var<'t, T>, n: usize) -> Vec<Var<'t, T>> {
        let mut states = Vec::with_capacity(n + 1);
        states.push(x0);
        let mut history: Vec<Var<'t, T>> = Vec::new();
        let mut x = x0;
        for step in 0..n {
            x = match self.scheme {
                Scheme::Ab3 if step >= 2 => {
                    let f0 = self.tendency.eval(x);
                    let next = self.ab3_var(
                        x,
                        f0,
                        history[history.len() - 1],
                        history[history.len() - 2],
                    );
                    history.push(f0);
                    next
                }
                Scheme::Ab3 => {
                    history.push(self.tendency.eval(x));
                    self.step_var(x)
                }
                _ => self.step_var(x),
            };
            states.push(x);
        }
        states
    }

    fn forecast(&self, x0: &[T], n: usize) -> Result<Trajectory<T>> {
        let dim = x0.len();
        let mut traj = Trajectory::with_capacity(dim, n + 1);
        traj.push(x0)?;
        let mut x = x0.to_vec();
        // Two most recent tendencies, newest last (AB3 only).
        let mut history: Vec<Vec<T>> = Vec::new();
        for step in 0..n {
            let tape = Tape::new();
            let xv = tape.constant(x);
            let next = match self.scheme {
                Scheme::Ab3 if step >= 2 => {
                    let f0 = self.tendency.eval(xv);
                    let f1 = tape.constant(history[1].clone());
                    let f2 = tape.constant(history[0].clone());
                    let next = self.ab3_var(xv, f0, f1, f2);
                    history.remove(0);
                    history.push(f0.value());
                    next
                }
                Scheme::Ab3 => {
                    history.push(self.tendency.eval(xv).value());
                    self.step_var(xv)
                }
                _ => self.step_var(xv),
            };
            tape.check_finite()
                .map_err(|_| Error::Divergence { step: step + 1 })?;
            x = next.value();
            traj.push(&x)?;
        }
        Ok(traj)
    }
}

/// Discrete linear model `x_{t+1} = M x_t`.
#[derive(Clone)]
pub struct LinearModel<T: Scalar> {
    map: SharedMap<T>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn new(map: SharedMap<T>) -> Result<Self> {
        if map.input_len() != map.output_len() {
            return Err(Error::contract("a linear model needs a square map"));
        }
        Ok(Self { map })
    }

    pub fn map(&self) -> &SharedMap<T> {
        &self.map
    }
}

impl<T: Scalar> Dynamics<T> for LinearModel<T> {
    fn dim(&self) -> usize {
        self.map.input_len()
    }

    fn rollout_var<'t>(&self, x0: Var<'t, T>, n: usize) -> Vec<Var<'t, T>> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(x0);
        for _ in 0..n {
            let next = out.last().unwrap().apply(&self.map);
            out.push(next);
        }
        out
    }

    fn forecast(&self, x0: &[T], n: usize) -> Result<Trajectory<T>> {
        let mut traj = Trajectory::with_capacity(x0.len(), n + 1);
        traj.push(x0)?;
        let mut x = x0.to_vec();
        for step in 1..=n {
            x = self.map.apply_vec(&x);
            if !crate::scalar::all_finite(&x) {
                return Err(Error::Divergence { step });
            }
            traj.push(&x)?;
        }
        Ok(traj)
    }
}

/// `dx/dt = −x`, handy for convergence checks.
#[derive(Clone, Copy, Debug)]
pub struct LinearDecay {
    pub dim: usize,
    pub rate: f64,
}

impl<T: Scalar> Tendency<T> for LinearDecay {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval<'t>(&self, x: Var<'t, T>) -> Var<'t, T> {
        x * T::lit(-self.rate)
    }
}
