//! Nature-run datasets: generation with the per-system defaults, and
//! loading with an instructive error when a dataset is missing.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use varda_core::data::{dataset_dir, generate_nature_run, Dataset, DatasetMeta, DatasetSplit};
use varda_core::integrate::{Dynamics, Integrator};
use varda_core::models::{Lorenz96, Lorenz96Params, QgModel, QgParams, QG_DEFAULT_DT};
use varda_core::obsgen::{perturb_ic, rng_for};

use crate::config::{ExperimentConfig, System};

pub const L96_DT: f64 = 0.01;
pub const L96_FORCING: f64 = 8.0;
pub const L96_SPINUP: usize = 14_400;
pub const QG_SPINUP: usize = 21_900;
/// Above this QG dimension the test period is cut to 1,095 steps.
pub const QG_SHORT_TEST_ABOVE: usize = 2048;
pub const SURROGATE_DIM: usize = 20;

const IC_STREAM: u64 = 0x6e61_7475;

pub fn l96_model(dim: usize) -> Result<Integrator<Lorenz96<f64>>> {
    Ok(Lorenz96::integrator(
        Lorenz96Params {
            dim,
            forcing: L96_FORCING,
        },
        L96_DT,
    )?)
}

pub fn qg_model(dim: usize) -> Result<Integrator<QgModel<f64>>> {
    Ok(QgModel::integrator(
        QgParams::for_state_dim(dim)?,
        QG_DEFAULT_DT,
    )?)
}

/// Default split of a system's stored run.
pub fn default_split(system: System, dim: usize, surrogate_train: usize) -> DatasetSplit {
    match system {
        System::Lorenz96 => DatasetSplit::lorenz96_default(),
        System::Qg if dim > QG_SHORT_TEST_ABOVE => {
            DatasetSplit::from_lengths(0, 1_095, 4_380, 1_095)
        }
        System::Qg => DatasetSplit::qg_default(),
        System::ReservoirSurrogate => {
            DatasetSplit::from_lengths(surrogate_train, 5_000, 1_000, 5_000)
        }
    }
}

pub fn path_for(cfg: &ExperimentConfig, system: System, dim: usize) -> PathBuf {
    dataset_dir(&cfg.data_dir, system.name(), dim, cfg.seed)
}

/// Generates (without saving) the nature run of `system` at `dim`.
pub fn generate(cfg: &ExperimentConfig, system: System, dim: usize) -> Result<Dataset> {
    let seed = cfg.seed;
    let split = default_split(system, dim, cfg.surrogate.train_steps);
    match system {
        System::Lorenz96 | System::ReservoirSurrogate => {
            if system == System::ReservoirSurrogate && dim != SURROGATE_DIM {
                bail!("the surrogate experiment runs on {SURROGATE_DIM}-dimensional Lorenz-96, not {dim}");
            }
            let model = l96_model(dim)?;
            let x0 = perturb_ic(&vec![L96_FORCING; dim], 0.01, seed)?;
            let meta = DatasetMeta {
                system: system.name().into(),
                dim,
                seed,
                dt: L96_DT,
                spinup_steps: L96_SPINUP,
                split: split.clone(),
                params: json!({ "forcing": L96_FORCING, "scheme": "dopri5" }),
                climatology_sd: vec![],
                spinup_sd: vec![],
            };
            Ok(generate_nature_run(&model, &x0, L96_SPINUP, split, meta)?)
        }
        System::Qg => {
            let model = qg_model(dim)?;
            let mut rng = rng_for(seed, IC_STREAM);
            let q0 = model
                .tendency()
                .random_initial(&mut rng, cfg.qg.ic_amplitude);
            let meta = DatasetMeta {
                system: system.name().into(),
                dim,
                seed,
                dt: QG_DEFAULT_DT,
                spinup_steps: QG_SPINUP,
                split: split.clone(),
                params: json!({
                    "model": model.tendency().params(),
                    "ic_amplitude": cfg.qg.ic_amplitude,
                    "scheme": "ab3",
                }),
                climatology_sd: vec![],
                spinup_sd: vec![],
            };
            Ok(generate_nature_run(&model, &q0, QG_SPINUP, split, meta)?)
        }
    }
}

/// Generates and saves; returns the dataset directory.
pub fn generate_and_save(
    cfg: &ExperimentConfig,
    system: System,
    dim: usize,
) -> Result<(Dataset, PathBuf)> {
    let dir = path_for(cfg, system, dim);
    log::info!(
        "generating {system} dim {dim} seed {} into {}",
        cfg.seed,
        dir.display()
    );
    let ds = generate(cfg, system, dim)?;
    ds.save(&dir)
        .with_context(|| format!("writing dataset to {}", dir.display()))?;
    Ok((ds, dir))
}

/// Loads the dataset, generating it first when `auto_generate` is set.
pub fn load_or_generate(cfg: &ExperimentConfig, system: System, dim: usize) -> Result<Dataset> {
    let dir = path_for(cfg, system, dim);
    if dir.join("nature.bin").exists() {
        let ds =
            Dataset::load(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
        check_matches(&ds, cfg, system, dim, &dir)?;
        return Ok(ds);
    }
    if cfg.auto_generate {
        return Ok(generate_and_save(cfg, system, dim)?.0);
    }
    bail!(
        "no {system} dataset for dim {dim} seed {} at {}; create it with `varda generate --system {system} --dim {dim} --seed {} --data {}`",
        cfg.seed,
        dir.display(),
        cfg.seed,
        cfg.data_dir.display()
    )
}

fn check_matches(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    system: System,
    dim: usize,
    dir: &Path,
) -> Result<()> {
    let m = &ds.meta;
    if m.system != system.name() || m.dim != dim || m.seed != cfg.seed {
        bail!(
            "dataset at {} holds {} dim {} seed {}, expected {system} dim {dim} seed {}",
            dir.display(),
            m.system,
            m.dim,
            m.seed,
            cfg.seed
        );
    }
    if system == System::ReservoirSurrogate && m.split.train.len() < cfg.surrogate.train_steps {
        bail!(
            "dataset at {} has {} training steps, {} requested; regenerate it",
            dir.display(),
            m.split.train.len(),
            cfg.surrogate.train_steps
        );
    }
    Ok(())
}

/// Model forecast used by the free run and the sanity checks below.
pub fn continues(model: &dyn Dynamics<f64>, ds: &Dataset, step: usize) -> Result<bool> {
    let next = model.forecast(ds.states.state(step), 1)?;
    Ok(next.state(1) == ds.states.state(step + 1))
}
