use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::backprop::backprop_4dvar_capped;
use super::{
    incremental_4dvar, AnalysisResult, GaussianDiag, HessianMode, Linearizer, LrSchedule,
    ObsOperator, WindowProblem,
};
use crate::ad::{SharedMap, DEFAULT_DENSE_CAP};
use crate::error::{check_len, Error, Result};
use crate::integrate::Dynamics;
use crate::obsgen::{sample_obs, ObsNetwork};
use crate::scalar::Scalar;
use crate::solvers::BicgstabSettings;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// No assimilation: the free run from the initial background.
    None,
    Incremental,
    BackpropApprox,
    BackpropExact,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Incremental => "incremental",
            Method::BackpropApprox => "backprop-approx",
            Method::BackpropExact => "backprop-exact",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Method::None,
            Method::Incremental,
            Method::BackpropApprox,
            Method::BackpropExact,
        ]
        .into_iter()
        .find(|m| m.name() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct CycleConfig<T> {
    pub window_steps: usize,
    pub n_windows: usize,
    pub network: ObsNetwork,
    /// Background-error covariance (model space).
    pub b: GaussianDiag<T>,
    /// Observation-error covariance assumed by the assimilation.
    pub r: GaussianDiag<T>,
    pub method: Method,
    /// Outer loops (incremental) or gradient iterations (Backprop-4DVar).
    pub iterations: usize,
    pub lr: LrSchedule,
    pub inner: BicgstabSettings,
    pub dense_cap: usize,
}

impl<T: Scalar> CycleConfig<T> {
    pub fn new(
        window_steps: usize,
        n_windows: usize,
        network: ObsNetwork,
        b: GaussianDiag<T>,
        r: GaussianDiag<T>,
        method: Method,
    ) -> Self {
        Self {
            window_steps,
            n_windows,
            network,
            b,
            r,
            method,
            iterations: 3,
            lr: LrSchedule::default(),
            inner: BicgstabSettings::default(),
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CycleResult<T> {
    /// State estimate (system space) at every step, `n_windows·W + 1` states.
    pub estimates: Trajectory<T>,
    /// Spatial RMSE against the nature run at every step.
    pub rmse: Vec<f64>,
    /// Seconds spent in the assimilation solves, per window.
    pub window_times: Vec<f64>,
    /// Windows whose solve failed (the background was kept), with the error.
    pub failed_windows: Vec<(usize, String)>,
    /// `(J(x_b), J(x_a))` per window.
    pub costs: Vec<(f64, f64)>,
    /// Analysis (model space) at the start of every window.
    pub analyses: Vec<Vec<T>>,
}

impl<T> CycleResult<T> {
    pub fn analysis_time(&self) -> f64 {
        self.window_times.iter().sum()
    }
}

/// Cycled assimilation over `n_windows` consecutive windows of `nature`
/// (system space, `nature.state(0)` at the first window start). Each
/// window's analysis is forecast to the window end, which becomes the next
/// background. `readout` maps model states to system space when they
/// differ (a reservoir surrogate, say).
pub fn cycle_da<T, M>(
    model: &M,
    nature: &Trajectory<T>,
    background0: &[T],
    config: &CycleConfig<T>,
    linearizer: &dyn Linearizer<T, M>,
    readout: Option<&SharedMap<T>>,
) -> Result<CycleResult<T>>
where
    T: Scalar,
    M: Dynamics<T> + ?Sized,
{
    let w_steps = config.window_steps;
    if w_steps == 0 {
        return Err(Error::contract("window length must be at least one step"));
    }
    check_len("initial background", model.dim(), background0.len())?;
    let total = config.n_windows * w_steps;
    if nature.len() < total + 1 {
        return Err(Error::contract(format!(
            "{} windows of {w_steps} steps need {} nature states, have {}",
            config.n_windows,
            total + 1,
            nature.len()
        )));
    }
    let to_system = |x: &[T]| -> Vec<T> {
        match readout {
            Some(map) => map.apply_vec(x),
            None => x.to_vec(),
        }
    };
    let h = match readout {
        Some(map) => ObsOperator::through(map.clone(), config.network.indices.clone()),
        None => ObsOperator::selection(model.dim(), config.network.indices.clone()),
    };
    check_len(
        "state-to-system map output",
        nature.dim(),
        to_system(background0).len(),
    )?;

    let mut estimates = Trajectory::with_capacity(nature.dim(), total + 1);
    let mut window_times = Vec::with_capacity(config.n_windows);
    let mut failed_windows = Vec::new();
    let mut costs = Vec::with_capacity(config.n_windows);
    let mut analyses = Vec::with_capacity(config.n_windows);
    let mut background = background0.to_vec();

    for w in 0..config.n_windows {
        let start = w * w_steps;
        let mut analysis = background.clone();
        if config.method != Method::None {
            let obs = sample_obs(
                nature,
                &config.network,
                start,
                w_steps,
                w as u64,
                config.r.clone(),
            )?;
            let prob = WindowProblem::with_operator(
                model,
                background.clone(),
                config.b.clone(),
                obs,
                w_steps,
                h.clone(),
            )?;
            let clock = Instant::now();
            let outcome = solve(&prob, config, linearizer);
            window_times.push(clock.elapsed().as_secs_f64());
            match outcome {
                Ok(res) => {
                    costs.push((
                        res.cost_history.first().copied().unwrap_or(f64::NAN),
                        res.cost_history.last().copied().unwrap_or(f64::NAN),
                    ));
                    analysis = res.analysis;
                }
                Err(e) => {
                    log::debug!("window {w}: {e}; keeping the background");
                    failed_windows.push((w, e.to_string()));
                }
            }
        }
        let forecast = match model.forecast(&analysis, w_steps) {
            Ok(f) => f,
            Err(e) if analysis != background => {
                failed_windows.push((w, format!("analysis forecast failed: {e}")));
                analysis = background.clone();
                model.forecast(&analysis, w_steps)?
            }
            Err(e) => return Err(e),
        };
        for s in forecast.states().take(w_steps) {
            estimates.push(&to_system(s))?;
        }
        background = forecast.last().unwrap().to_vec();
        analyses.push(analysis);
    }
    estimates.push(&to_system(&background))?;

    let rmse = estimates
        .states()
        .enumerate()
        .map(|(i, e)| crate::metrics::rmse_state(e, nature.state(i)))
        .collect();
    Ok(CycleResult {
        estimates,
        rmse,
        window_times,
        failed_windows,
        costs,
        analyses,
    })
}

fn solve<T, M>(
    prob: &WindowProblem<'_, T, M>,
    config: &CycleConfig<T>,
    linearizer: &dyn Linearizer<T, M>,
) -> Result<AnalysisResult<T>>
where
    T: Scalar,
    M: Dynamics<T> + ?Sized,
{
    match config.method {
        Method::Incremental => {
            incremental_4dvar(prob, config.iterations, &config.inner, linearizer)
        }
        Method::BackpropApprox => backprop_4dvar_capped(
            prob,
            config.iterations,
            &config.lr,
            HessianMode::Approximate,
            &config.inner,
            config.dense_cap,
        ),
        Method::BackpropExact => backprop_4dvar_capped(
            prob,
            config.iterations,
            &config.lr,
            HessianMode::Exact,
            &config.inner,
            config.dense_cap,
        ),
        Method::None => unreachable!("no solve for the free run"),
    }
}
