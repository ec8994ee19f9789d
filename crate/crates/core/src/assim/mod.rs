//! Strong-constraint 4D-Var: the cost function, incremental 4D-Var with a
//! BiCGSTAB inner loop, Backprop-4DVar, Gauss–Newton on the stacked
//! residual, and cycling over long nature runs.

mod backprop;
mod cycle;
mod gauss_newton;
mod incremental;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ad::{Compose, Selection, SharedMap, Tape, Var};
use crate::error::{check_len, Error, Result};
use crate::integrate::Dynamics;
use crate::scalar::Scalar;

pub use backprop::{backprop_4dvar, backprop_4dvar_capped, lr_value, HessianMode, LrSchedule};
pub use cycle::{cycle_da, CycleConfig, CycleResult, Method};
pub use gauss_newton::{gauss_newton_4dvar, gauss_newton_residual, stacked_residual_var};
pub use incremental::{
    incremental_4dvar, AutodiffLinearizer, L96AnalyticLinearizer, Linearizer, ObsLinearization,
};

/// Diagonal covariance stored as its variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDiag<T> {
    variance: Vec<T>,
}

impl<T: Scalar> GaussianDiag<T> {
    pub fn new(variance: Vec<T>) -> Result<Self> {
        if variance.iter().any(|&v| !(v.is_finite() && v > T::zero())) {
            return Err(Error::contract(
                "covariance variances must be finite and positive",
            ));
        }
        Ok(Self { variance })
    }

    pub fn from_sd(sd: &[T]) -> Result<Self> {
        Self::new(sd.iter().map(|&s| s * s).collect())
    }

    pub fn uniform(n: usize, variance: T) -> Result<Self> {
        Self::new(vec![variance; n])
    }

    pub fn len(&self) -> usize {
        self.variance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variance.is_empty()
    }

    pub fn variance(&self) -> &[T] {
        &self.variance
    }

    pub fn inverse(&self) -> Vec<T> {
        self.variance.iter().map(|&v| T::one() / v).collect()
    }

    pub fn inv_sqrt(&self) -> Vec<T> {
        self.variance.iter().map(|&v| T::one() / v.sqrt()).collect()
    }
}

/// Observations within one window. `values` holds one row of
/// `indices.len()` entries per time in `times`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationBatch<T> {
    pub times: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<T>,
    /// Observation-error covariance `R` (per observed component).
    pub noise: GaussianDiag<T>,
}

impl<T: Scalar> ObservationBatch<T> {
    pub fn new(
        times: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<T>,
        noise: GaussianDiag<T>,
    ) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(
                "observation indices must be strictly increasing",
            ));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(
                "observation times must be strictly increasing",
            ));
        }
        check_len(
            "observation values",
            times.len() * indices.len(),
            values.len(),
        )?;
        check_len("observation error variances", indices.len(), noise.len())?;
        Ok(Self {
            times,
            indices,
            values,
            noise,
        })
    }

    pub fn empty(noise: GaussianDiag<T>) -> Self {
        Self {
            times: Vec::new(),
            indices: Vec::new(),
            values: Vec::new(),
            noise,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty() || self.indices.is_empty()
    }

    pub fn row(&self, time_index: usize) -> &[T] {
        let m = self.indices.len();
        &self.values[time_index * m..(time_index + 1) * m]
    }

    pub fn value(&self, time_index: usize, obs_index: usize) -> T {
        self.row(time_index)[obs_index]
    }

    pub fn last_time(&self) -> usize {
        self.times.last().copied().unwrap_or(0)
    }

    /// `R⁻¹` repeated for every observation time.
    pub fn stacked_inverse(&self) -> Vec<T> {
        let inv = self.noise.inverse();
        self.times
            .iter()
            .flat_map(|_| inv.iter().copied())
            .collect()
    }
}

/// Linear observation operator from model space to the observed values.
#[derive(Clone)]
pub enum ObsOperator<T: Scalar> {
    /// Direct observation of state components.
    Selection(Arc<Selection>),
    /// Any other linear map (for instance a readout followed by a selection).
    Linear(SharedMap<T>),
}

impl<T: Scalar> ObsOperator<T> {
    pub fn selection(state_dim: usize, indices: Vec<usize>) -> Self {
        Self::Selection(Arc::new(Selection::new(state_dim, indices)))
    }

    /// `S·W` for a state-to-system map `W` and selected system components.
    pub fn through(map: SharedMap<T>, indices: Vec<usize>) -> Self {
        let sel = Arc::new(Selection::new(map.output_len(), indices));
        Self::Linear(Arc::new(Compose::new(vec![map, sel])))
    }

    pub fn map(&self) -> SharedMap<T> {
        match self {
            Self::Selection(s) => s.clone(),
            Self::Linear(m) => m.clone(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.map().input_len()
    }

    pub fn output_len(&self) -> usize {
        self.map().output_len()
    }
}

/// One analysis window: background, `B`, observations, forecast model and
/// observation operator.
pub struct WindowProblem<'m, T: Scalar, M: ?Sized> {
    pub background: Vec<T>,
    pub b: GaussianDiag<T>,
    pub obs: ObservationBatch<T>,
    pub model: &'m M,
    pub window_steps: usize,
    pub h: ObsOperator<T>,
}

impl<'m, T: Scalar, M: Dynamics<T> + ?Sized> WindowProblem<'m, T, M> {
    /// Problem observing `obs.indices` of the state directly.
    pub fn new(
        model: &'m M,
        background: Vec<T>,
        b: GaussianDiag<T>,
        obs: ObservationBatch<T>,
        window_steps: usize,
    ) -> Result<Self> {
        if obs.indices.iter().any(|&i| i >= model.dim()) {
            return Err(Error::contract("observed index beyond state dimension"));
        }
        let h = ObsOperator::selection(model.dim(), obs.indices.clone());
        Self::with_operator(model, background, b, obs, window_steps, h)
    }

    pub fn with_operator(
        model: &'m M,
        background: Vec<T>,
        b: GaussianDiag<T>,
        obs: ObservationBatch<T>,
        window_steps: usize,
        h: ObsOperator<T>,
    ) -> Result<Self> {
        let n = model.dim();
        check_len("background", n, background.len())?;
        check_len("background covariance", n, b.len())?;
        check_len("observation operator input", n, h.input_len())?;
        check_len(
            "observation operator output",
            obs.indices.len(),
            h.output_len(),
        )?;
        if obs.last_time() > window_steps {
            return Err(Error::contract(format!(
                "observation at step {} outside a {window_steps}-step window",
                obs.last_time()
            )));
        }
        Ok(Self {
            background,
            b,
            obs,
            model,
            window_steps,
            h,
        })
    }

    pub fn dim(&self) -> usize {
        self.background.len()
    }

    /// Stacked model-equivalents `H(x_t)` at every observation time, recorded.
    pub fn obs_map_var<'t>(&self, x0: Var<'t, T>) -> Var<'t, T> {
        let tape = x0.tape();
        if self.obs.is_empty() {
            return tape.constant(Vec::new());
        }
        let states = self.model.rollout_var(x0, self.obs.last_time());
        let h = self.h.map();
        let parts: Vec<Var<'t, T>> = self
            .obs
            .times
            .iter()
            .map(|&t| states[t].apply(&h))
            .collect();
        tape.concat(&parts)
    }

    /// The cost, recorded on `x0`'s tape.
    pub fn cost_var<'t>(&self, x0: Var<'t, T>) -> Var<'t, T> {
        let tape = x0.tape();
        let half = T::lit(0.5);
        let db = x0 - tape.constant(self.background.clone());
        let mut j = db.square().mul_const(&self.b.inverse()).sum() * half;
        if !self.obs.is_empty() {
            let innov = self.obs_map_var(x0) - tape.constant(self.obs.values.clone());
            j = j + innov.square().mul_const(&self.obs.stacked_inverse()).sum() * half;
        }
        j
    }

    /// `J(x0)` along the nonlinear numeric rollout.
    pub fn cost(&self, x0: &[T]) -> Result<T> {
        check_len("initial state", self.dim(), x0.len())?;
        let (jb, jo) = self.cost_terms(x0)?;
        Ok(jb + jo)
    }

    /// Background and observation parts of the cost.
    pub fn cost_terms(&self, x0: &[T]) -> Result<(T, T)> {
        let half = T::lit(0.5);
        let jb = x0
            .iter()
            .zip(&self.background)
            .zip(self.b.variance())
            .map(|((&x, &xb), &v)| (x - xb) * (x - xb) / v)
            .sum::<T>()
            * half;
        let g = self.obs_map(x0)?;
        Ok((jb, self.obs_cost(&g)))
    }

    /// `½ Σ (y − g)ᵀ R⁻¹ (y − g)` for stacked model-equivalents `g`.
    pub fn obs_cost(&self, g: &[T]) -> T {
        let half = T::lit(0.5);
        self.obs
            .values
            .iter()
            .zip(g)
            .zip(self.obs.stacked_inverse())
            .map(|((&y, &gi), w)| (y - gi) * (y - gi) * w)
            .sum::<T>()
            * half
    }

    /// Stacked model-equivalents along the numeric rollout.
    pub fn obs_map(&self, x0: &[T]) -> Result<Vec<T>> {
        if self.obs.is_empty() {
            return Ok(Vec::new());
        }
        let traj = self.model.forecast(x0, self.obs.last_time())?;
        let h = self.h.map();
        Ok(self
            .obs
            .times
            .iter()
            .flat_map(|&t| h.apply_vec(traj.state(t)))
            .collect())
    }

    /// Cost and gradient from one recording.
    pub fn value_and_grad(&self, x0: &[T]) -> Result<(T, Vec<T>)> {
        check_len("initial state", self.dim(), x0.len())?;
        crate::ad::value_and_grad(|x| self.cost_var(x), x0)
    }

    /// Recorded cost at `x0` on a fresh tape (for tests and diagnostics).
    pub fn cost_recorded(&self, x0: &[T]) -> Result<T> {
        let tape = Tape::new();
        let j = self.cost_var(tape.input(x0.to_vec()));
        tape.check_finite()?;
        Ok(j.scalar_value())
    }
}

/// Outcome of one window's minimisation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisResult<T> {
    pub analysis: Vec<T>,
    /// `J` at the start of every iteration and at the final analysis.
    pub cost_history: Vec<f64>,
    pub wall_time: f64,
    pub iterations: usize,
    /// Inner-solver reports, one per outer loop (incremental 4D-Var) or per
    /// iterative Hessian solve.
    pub inner: Vec<crate::solvers::LinearSolveReport>,
}
