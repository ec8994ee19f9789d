//! One trial: build the paired inputs (segment, network, background, B, R)
//! and cycle every requested method over them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use varda_core::ad::SharedMap;
use varda_core::assim::{
    cycle_da, AutodiffLinearizer, CycleConfig, CycleResult, GaussianDiag, L96AnalyticLinearizer,
    LrSchedule, Method,
};
use varda_core::integrate::{Dynamics, Integrator};
use varda_core::metrics::{aggregate, TrialResult};
use varda_core::models::{Lorenz96, QgModel};
use varda_core::obsgen::{draw_network, perturb_ic, perturb_ic_scaled, ObsNetwork};
use varda_core::surrogate::{reservoir_background_cov, ReservoirModel};
use varda_core::Trajectory;

use crate::config::ExperimentConfig;

pub enum SystemModel {
    Lorenz96(Integrator<Lorenz96<f64>>),
    /// With the per-component spin-up SD that scales every error statistic.
    Qg(Integrator<QgModel<f64>>, Vec<f64>),
    /// With the climatological SD of the modelled system.
    Reservoir {
        model: ReservoirModel<f64>,
        readout: SharedMap<f64>,
        sd: Vec<f64>,
    },
}

/// A model plus the truth it is assimilated against. The first `lead`
/// states of `source` are reserved for reservoir synchronisation.
pub struct Context {
    pub system: SystemModel,
    pub source: Trajectory<f64>,
    pub lead: usize,
}

/// Inputs shared bitwise by every method of one trial.
pub struct TrialSetup {
    pub trial: usize,
    pub seed: u64,
    pub start: usize,
    pub nature: Trajectory<f64>,
    pub background: Vec<f64>,
    pub network: ObsNetwork,
    pub b: GaussianDiag<f64>,
    pub r: GaussianDiag<f64>,
    pub n_windows: usize,
}

/// Per-trial, per-method output file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(flatten)]
    pub result: TrialResult,
    pub trial: usize,
    pub seed: u64,
    pub dim: usize,
    pub n_obs: usize,
    pub noise: f64,
    pub start_step: usize,
    pub windows: usize,
    pub lr: LrSchedule,
    pub iterations: usize,
    /// Solve time per window; comparable across runs of different length.
    pub mean_window_time_s: f64,
    pub failed_windows: Vec<(usize, String)>,
    /// Method-specific scalar diagnostics.
    pub extra: BTreeMap<String, f64>,
}

pub struct TrialRun {
    pub setup: TrialSetup,
    pub records: Vec<TrialRecord>,
    pub results: Vec<(Method, CycleResult<f64>)>,
}

/// Start of trial `trial`'s segment: consecutive trials tile the source.
pub fn segment_start(trial: usize, need: usize, avail: usize) -> usize {
    let slots = avail.saturating_sub(need) + 1;
    (trial * need) % slots
}

impl Context {
    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    fn windows(&self, cfg: &ExperimentConfig) -> Result<usize> {
        let avail = self.source.len().saturating_sub(self.lead + 1);
        let n = cfg.n_windows.min(avail / cfg.window_steps);
        if n == 0 {
            bail!(
                "a {}-step window does not fit in the {} available states",
                cfg.window_steps,
                self.source.len()
            );
        }
        Ok(n)
    }

    /// Inputs of trial `trial` with `n_obs` observed components at noise
    /// level `noise` (an SD for Lorenz-96, a fraction of the per-component
    /// SD otherwise).
    pub fn setup(
        &self,
        cfg: &ExperimentConfig,
        trial: usize,
        n_obs: usize,
        noise: f64,
    ) -> Result<TrialSetup> {
        let seed = cfg.trial_seed(trial);
        let n_windows = self.windows(cfg)?;
        let need = n_windows * cfg.window_steps + 1;
        let start = self.lead + segment_start(trial, need, self.source.len() - self.lead);
        let nature = self.source.segment(start..start + need);
        let dim = self.dim();
        let scaled =
            |sd: &[f64], idx: &[usize], f: f64| idx.iter().map(|&i| f * sd[i]).collect::<Vec<_>>();
        let (background, network, b, r) = match &self.system {
            SystemModel::Lorenz96(_) => {
                let b_sd = noise * cfg.b_ratio;
                let net = draw_network(dim, n_obs, cfg.every_k, noise, seed)?;
                (
                    perturb_ic(nature.state(0), b_sd, seed)?,
                    net,
                    GaussianDiag::uniform(dim, b_sd * b_sd)?,
                    GaussianDiag::uniform(n_obs, (cfg.r_inflation * noise).powi(2))?,
                )
            }
            SystemModel::Qg(_, sd) => {
                let q = &cfg.qg;
                let mut net = draw_network(dim, n_obs, cfg.every_k, 0.0, seed)?;
                net.noise_sd = scaled(sd, &net.indices, noise);
                let all: Vec<usize> = (0..dim).collect();
                (
                    perturb_ic_scaled(nature.state(0), &scaled(sd, &all, q.ic_frac), seed)?,
                    net.clone(),
                    GaussianDiag::from_sd(&scaled(sd, &all, q.b_frac))?,
                    GaussianDiag::from_sd(&scaled(sd, &net.indices, q.r_frac))?,
                )
            }
            SystemModel::Reservoir { model, sd, .. } => {
                let s = &cfg.surrogate;
                let mut net = draw_network(dim, n_obs, cfg.every_k, 0.0, seed)?;
                net.noise_sd = scaled(sd, &net.indices, noise);
                let sync = self.source.segment(start - s.sync_steps..start);
                (
                    model.synchronize_noisy(&sync, s.sync_noise_sd, seed)?,
                    net.clone(),
                    reservoir_background_cov(model, s.b_scale, s.b_floor)?,
                    GaussianDiag::from_sd(&scaled(sd, &net.indices, cfg.r_inflation * noise))?,
                )
            }
        };
        Ok(TrialSetup {
            trial,
            seed,
            start,
            nature,
            background,
            network,
            b,
            r,
            n_windows,
        })
    }

    /// Cycles `method` over the trial's segment, or its first `windows`.
    pub fn cycle(
        &self,
        cfg: &ExperimentConfig,
        setup: &TrialSetup,
        method: Method,
        lr: LrSchedule,
        windows: usize,
    ) -> Result<CycleResult<f64>> {
        let mut cc = CycleConfig::new(
            cfg.window_steps,
            windows.min(setup.n_windows),
            setup.network.clone(),
            setup.b.clone(),
            setup.r.clone(),
            method,
        );
        cc.iterations = cfg.iterations;
        cc.lr = lr;
        cc.inner = cfg.inner();
        cc.dense_cap = cfg.dense_cap;
        let out = match &self.system {
            SystemModel::Lorenz96(m) if method == Method::Incremental => cycle_da(
                m,
                &setup.nature,
                &setup.background,
                &cc,
                &L96AnalyticLinearizer,
                None,
            ),
            SystemModel::Lorenz96(m) => cycle_da(
                m,
                &setup.nature,
                &setup.background,
                &cc,
                &AutodiffLinearizer,
                None,
            ),
            SystemModel::Qg(m, _) => cycle_da(
                m,
                &setup.nature,
                &setup.background,
                &cc,
                &AutodiffLinearizer,
                None,
            ),
            SystemModel::Reservoir { model, readout, .. } => cycle_da(
                model,
                &setup.nature,
                &setup.background,
                &cc,
                &AutodiffLinearizer,
                Some(readout),
            ),
        };
        out.with_context(|| format!("{method} cycle of trial {}", setup.trial))
    }

    /// Whether `method` can run at this model dimension.
    pub fn refusal(&self, cfg: &ExperimentConfig, method: Method) -> Option<String> {
        let n = self.model_dim();
        (method == Method::BackpropExact && n > cfg.dense_cap).then(|| {
            format!(
                "the exact Hessian needs a dense {n}×{n} matrix, above the dense cap of {}; \
                 use backprop-approx or raise dense_cap",
                cfg.dense_cap
            )
        })
    }

    pub fn model_dim(&self) -> usize {
        match &self.system {
            SystemModel::Lorenz96(m) => m.dim(),
            SystemModel::Qg(m, _) => m.dim(),
            SystemModel::Reservoir { model, .. } => model.dim(),
        }
    }

    fn field_sd(&self) -> Option<&[f64]> {
        match &self.system {
            SystemModel::Lorenz96(_) => None,
            SystemModel::Qg(_, sd) => Some(sd),
            SystemModel::Reservoir { .. } => None,
        }
    }

    /// Runs `methods` (skipping refused ones) on the trial's shared inputs.
    /// `windows_for` caps the windows per method.
    pub fn run_trial(
        &self,
        cfg: &ExperimentConfig,
        trial: usize,
        n_obs: usize,
        noise: f64,
        methods: &[Method],
        lr: LrSchedule,
        windows_for: &dyn Fn(Method) -> usize,
    ) -> Result<TrialRun> {
        let setup = self.setup(cfg, trial, n_obs, noise)?;
        let mut results = Vec::new();
        for &m in methods {
            if self.refusal(cfg, m).is_some() {
                continue;
            }
            results.push((m, self.cycle(cfg, &setup, m, lr, windows_for(m))?));
        }
        let records = results
            .iter()
            .map(|(m, res)| self.record(cfg, &setup, *m, res, lr, noise, &results))
            .collect();
        Ok(TrialRun {
            setup,
            records,
            results,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        cfg: &ExperimentConfig,
        setup: &TrialSetup,
        method: Method,
        res: &CycleResult<f64>,
        lr: LrSchedule,
        noise: f64,
        all: &[(Method, CycleResult<f64>)],
    ) -> TrialRecord {
        let windows = res.analyses.len();
        let wall = res.analysis_time();
        let mut extra = BTreeMap::new();
        let idx = &setup.network.indices;
        let unobserved: Vec<usize> = (0..self.dim())
            .filter(|i| idx.binary_search(i).is_err())
            .collect();
        let steps = res.estimates.len();
        extra.insert(
            "observed_rmse".into(),
            subset_rmse(&res.estimates, &setup.nature, idx, steps),
        );
        if !unobserved.is_empty() {
            extra.insert(
                "unobserved_rmse".into(),
                subset_rmse(&res.estimates, &setup.nature, &unobserved, steps),
            );
        }
        if let Some((_, free)) = all.iter().find(|(m, _)| *m == Method::None) {
            let n = steps.min(free.rmse.len());
            let ratio = aggregate(&res.rmse[..n]) / aggregate(&free.rmse[..n]);
            extra.insert("rmse_ratio_to_free_run".into(), ratio);
        }
        if let (Some(sd), Some((_, inc))) = (
            self.field_sd(),
            all.iter().find(|(m, _)| *m == Method::Incremental),
        ) {
            if method != Method::Incremental && method != Method::None {
                let (max_rel, rms_rel) = analysis_gap(&res.analyses, &inc.analyses, sd);
                extra.insert("analysis_gap_vs_incremental_max".into(), max_rel);
                extra.insert("analysis_gap_vs_incremental_rms".into(), rms_rel);
            }
        }
        TrialRecord {
            result: TrialResult {
                method: method.name().into(),
                aggregate_rmse: aggregate(&res.rmse),
                rmse_series: res.rmse.clone(),
                wall_time_s: wall,
                diverged_windows: res.failed_windows.len(),
            },
            trial: setup.trial,
            seed: setup.seed,
            dim: self.dim(),
            n_obs: idx.len(),
            noise,
            start_step: setup.start,
            windows,
            lr,
            iterations: cfg.iterations,
            mean_window_time_s: if windows > 0 && method != Method::None {
                wall / windows as f64
            } else {
                0.0
            },
            failed_windows: res.failed_windows.clone(),
            extra,
        }
    }
}

/// RMSE over the first `steps` states restricted to components `idx`.
pub fn subset_rmse(
    est: &Trajectory<f64>,
    truth: &Trajectory<f64>,
    idx: &[usize],
    steps: usize,
) -> f64 {
    let mut acc = 0.0;
    for k in 0..steps {
        let (a, b) = (est.state(k), truth.state(k));
        acc += idx.iter().map(|&i| (a[i] - b[i]).powi(2)).sum::<f64>();
    }
    (acc / (steps * idx.len()).max(1) as f64).sqrt()
}

/// Largest and RMS analysis difference over the common windows, each
/// component scaled by its field SD.
pub fn analysis_gap(a: &[Vec<f64>], b: &[Vec<f64>], sd: &[f64]) -> (f64, f64) {
    let (mut max, mut sq, mut n) = (0.0f64, 0.0, 0usize);
    for (x, y) in a.iter().zip(b) {
        for ((u, v), s) in x.iter().zip(y).zip(sd) {
            let d = (u - v).abs() / s;
            max = max.max(d);
            sq += d * d;
            n += 1;
        }
    }
    (max, (sq / n.max(1) as f64).sqrt())
}

/// Method output directory under an experiment group.
pub fn method_dir(group: &Path, method: Method) -> PathBuf {
    group.join(method.name())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_records(group: &Path, records: &[TrialRecord]) -> Result<()> {
    for r in records {
        let m = Method::parse(&r.result.method).expect("records carry known method names");
        write_json(
            &method_dir(group, m).join(format!("trial_{}.json", r.trial)),
            r,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_tile_and_stay_in_range() {
        assert_eq!(segment_start(0, 601, 5001), 0);
        assert_eq!(segment_start(1, 601, 5001), 601);
        for t in 0..40 {
            assert!(segment_start(t, 601, 5001) + 601 <= 5001);
        }
        assert_eq!(segment_start(3, 10, 10), 0);
    }

    #[test]
    fn subset_rmse_of_constant_offset() {
        let truth = Trajectory::from_flat(3, vec![0.0; 6]).unwrap();
        let est = Trajectory::from_flat(3, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(subset_rmse(&est, &truth, &[1], 2), 2.0);
        assert!((subset_rmse(&est, &truth, &[0, 2], 2) - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn analysis_gap_is_scaled_by_field_sd() {
        let (max, rms) = analysis_gap(&[vec![1.0, 2.0]], &[vec![1.5, 2.0]], &[0.5, 1.0]);
        assert_eq!(max, 1.0);
        assert!((rms - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
