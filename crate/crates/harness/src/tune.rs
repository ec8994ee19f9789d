//! Random search for the Backprop-4DVar step schedule on the validation
//! split.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use varda_core::assim::{LrSchedule, Method};
use varda_core::data::Phase;
use varda_core::obsgen::rng_for;

use crate::config::{ExperimentConfig, SearchSpace, System};
use crate::experiments::context_for;
use crate::runner::{write_json, Context};
use crate::table::{num, Table};

const SEARCH_STREAM: u64 = 0x7475_6e65;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sample: usize,
    pub alpha0: f64,
    pub decay: f64,
    /// Mean aggregate validation RMSE over trials; infinite if diverged.
    pub validation_rmse: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    /// Flattened so the file doubles as an `LrSchedule` for `--tuned`.
    #[serde(flatten)]
    pub best: LrSchedule,
    pub validation_rmse: f64,
    pub system: System,
    pub dim: usize,
    pub samples: usize,
    pub trace: Vec<TraceRow>,
}

/// Candidate schedules: log-uniform `α₀`, uniform decay; the default pair
/// first when requested and inside the space.
pub fn candidates(space: &SearchSpace, seed: u64) -> Vec<LrSchedule> {
    let mut rng = rng_for(seed, SEARCH_STREAM);
    let default = LrSchedule::default();
    let mut out = Vec::with_capacity(space.samples);
    if space.include_default && space.contains(&default) {
        out.push(default);
    }
    let (lo, hi) = (space.lr_min.ln(), space.lr_max.ln());
    while out.len() < space.samples {
        let a: f64 = rng.random();
        let d: f64 = rng.random();
        out.push(LrSchedule {
            alpha0: (lo + (hi - lo) * a).exp().clamp(space.lr_min, space.lr_max),
            decay: space.decay_min + (space.decay_max - space.decay_min) * d,
        });
    }
    out
}

/// Noise level a system's experiment uses by default.
pub fn default_noise(cfg: &ExperimentConfig, system: System) -> f64 {
    match system {
        System::Qg => cfg.qg.obs_noise_frac,
        _ => cfg.noise_sd,
    }
}

/// Mean validation RMSE of one schedule over the configured trials.
pub fn evaluate(
    ctx: &Context,
    cfg: &ExperimentConfig,
    lr: LrSchedule,
    noise: f64,
) -> Result<(f64, bool)> {
    let n_obs = cfg.n_obs(ctx.dim());
    let per_trial: Vec<(f64, usize, usize)> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let run =
                ctx.run_trial(cfg, i, n_obs, noise, &[Method::BackpropApprox], lr, &|_| {
                    usize::MAX
                })?;
            let r = &run.records[0];
            Ok((
                r.result.aggregate_rmse,
                r.result.diverged_windows,
                r.windows,
            ))
        })
        .collect::<Result<_>>()?;
    let diverged = per_trial
        .iter()
        .any(|&(rmse, failed, windows)| !rmse.is_finite() || 2 * failed > windows);
    let mean = per_trial.iter().map(|t| t.0).sum::<f64>() / per_trial.len() as f64;
    Ok(if diverged {
        (f64::INFINITY, true)
    } else {
        (mean, false)
    })
}

pub fn tune_dir(cfg: &ExperimentConfig, system: System, dim: usize) -> PathBuf {
    cfg.out_dir
        .join("tune")
        .join(system.name())
        .join(dim.to_string())
}

/// Searches on the validation split only, persists `trace.csv` and
/// `best.json`, and returns the outcome.
pub fn tune_lr(cfg: &ExperimentConfig, system: System, dim: usize) -> Result<TuneOutcome> {
    cfg.search.validate()?;
    let ctx = context_for(cfg, system, dim, Phase::Tuning)?;
    let noise = default_noise(cfg, system);
    let mut trace = Vec::with_capacity(cfg.search.samples);
    for (k, lr) in candidates(&cfg.search, cfg.seed).into_iter().enumerate() {
        let (rmse, diverged) = evaluate(&ctx, cfg, lr, noise)?;
        log::info!(
            "sample {k}: α₀ {:.4} decay {:.3} → {rmse:.5}",
            lr.alpha0,
            lr.decay
        );
        trace.push(TraceRow {
            sample: k,
            alpha0: lr.alpha0,
            decay: lr.decay,
            validation_rmse: rmse,
            diverged,
        });
    }
    let best = trace
        .iter()
        .filter(|r| !r.diverged)
        .min_by(|a, b| a.validation_rmse.total_cmp(&b.validation_rmse))
        .cloned();
    let Some(best) = best else {
        bail!(
            "all {} samples diverged on the validation split; narrow the search space (lower lr_max or decay_max)",
            trace.len()
        );
    };
    let out = TuneOutcome {
        best: LrSchedule {
            alpha0: best.alpha0,
            decay: best.decay,
        },
        validation_rmse: best.validation_rmse,
        system,
        dim,
        samples: trace.len(),
        trace,
    };
    persist(&out, &tune_dir(cfg, system, dim))?;
    Ok(out)
}

fn persist(out: &TuneOutcome, dir: &Path) -> Result<()> {
    let mut t = Table::new(["sample", "alpha0", "decay", "validation_rmse", "diverged"]);
    for r in &out.trace {
        t.push(vec![
            r.sample.to_string(),
            num(r.alpha0),
            num(r.decay),
            num(r.validation_rmse),
            r.diverged.to_string(),
        ]);
    }
    t.write_csv(&dir.join("trace.csv"))?;
    write_json(&dir.join("best.json"), out)
}

/// Reads the schedule from a `best.json` written by [`tune_lr`] (or any
/// JSON object with `alpha0` and `decay`).
pub fn load_tuned(path: &Path) -> Result<LrSchedule> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let lr: LrSchedule =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    lr.validate()?;
    Ok(lr)
}
