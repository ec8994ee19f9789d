//! The four experiment drivers. Each writes per-trial JSON records under
//! `<out>/<experiment>/…/<method>/trial_<i>.json` and a `summary.csv`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context as _, Result};
use rayon::prelude::*;
use serde_json::json;
use varda_core::assim::Method;
use varda_core::data::{dataset_dir, write_array, Dataset, Phase, SplitLabel};
use varda_core::metrics::{loglog_slope, mean_ci95, mean_normalized_difference, paired_t_test};
use varda_core::surrogate::{build_reservoir, train_readout, ReservoirModel, ReservoirSpec};
use varda_core::Trajectory;

use crate::config::{ExperimentConfig, System};
use crate::datasets::{l96_model, load_or_generate, qg_model, SURROGATE_DIM};
use crate::runner::{write_json, write_records, Context, SystemModel, TrialRecord, TrialRun};
use crate::table::{num, Table};

/// Runs `f` over all trials on the worker pool; results come back in trial
/// order whatever the completion order.
pub fn par_trials<R: Send>(
    cfg: &ExperimentConfig,
    f: impl Fn(usize) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    (0..cfg.trials).into_par_iter().map(f).collect()
}

fn source_label(phase: Phase) -> SplitLabel {
    match phase {
        Phase::Tuning => SplitLabel::Validation,
        _ => SplitLabel::Test,
    }
}

pub fn l96_context(ds: &Dataset, phase: Phase) -> Result<Context> {
    Ok(Context {
        system: SystemModel::Lorenz96(l96_model(ds.dim())?),
        source: ds.segment(source_label(phase), phase)?,
        lead: 0,
    })
}

pub fn qg_context(ds: &Dataset, phase: Phase) -> Result<Context> {
    ensure!(
        ds.meta.spinup_sd.len() == ds.dim() && ds.meta.spinup_sd.iter().all(|&s| s > 0.0),
        "QG dataset lacks a positive spin-up climatology"
    );
    Ok(Context {
        system: SystemModel::Qg(qg_model(ds.dim())?, ds.meta.spinup_sd.clone()),
        source: ds.segment(source_label(phase), phase)?,
        lead: 0,
    })
}

/// Surrogate context: during testing the transient split feeds the
/// synchronisation of the first trial; during tuning the head of the
/// validation split does.
pub fn surrogate_context(cfg: &ExperimentConfig, ds: &Dataset, phase: Phase) -> Result<Context> {
    let model = load_or_train_reservoir(cfg, ds)?;
    let sync = cfg.surrogate.sync_steps;
    let (source, lead) = match phase {
        Phase::Tuning => (ds.segment(SplitLabel::Validation, phase)?, sync),
        _ => {
            let transient = ds.segment(SplitLabel::Transient, phase)?;
            let lead = transient.len() - 1;
            let mut all = transient;
            all.extend_continuing(&ds.segment(SplitLabel::Test, phase)?)?;
            (all, lead)
        }
    };
    ensure!(
        sync >= 1 && sync <= lead,
        "{sync} synchronisation steps do not fit before the assimilation segment ({lead} available)"
    );
    Ok(Context {
        system: SystemModel::Reservoir {
            readout: model.readout_map()?,
            model,
            sd: ds.meta.climatology_sd.clone(),
        },
        source,
        lead,
    })
}

pub fn reservoir_spec(cfg: &ExperimentConfig) -> ReservoirSpec {
    let s = &cfg.surrogate;
    ReservoirSpec {
        n_reservoir: s.n_reservoir,
        sparsity: s.sparsity,
        spectral_radius: s.spectral_radius,
        sigma_u: s.sigma_u,
        leak: s.leak,
        bias_scale: s.bias_scale,
        ridge_lambda: s.ridge_lambda,
        ..ReservoirSpec::for_input(SURROGATE_DIM, cfg.seed)
    }
}

fn reservoir_dir(cfg: &ExperimentConfig) -> PathBuf {
    dataset_dir(
        &cfg.data_dir,
        System::ReservoirSurrogate.name(),
        SURROGATE_DIM,
        cfg.seed,
    )
    .join("reservoir")
}

/// Loads the cached reservoir when it was trained with the current
/// settings; otherwise trains one on the train split and caches it.
pub fn load_or_train_reservoir(
    cfg: &ExperimentConfig,
    ds: &Dataset,
) -> Result<ReservoirModel<f64>> {
    let dir = reservoir_dir(cfg);
    let settings = serde_json::to_value(&cfg.surrogate)?;
    let stamp = dir.join("settings.json");
    if let Ok(text) = std::fs::read_to_string(&stamp) {
        if serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .as_ref()
            == Some(&settings)
        {
            return ReservoirModel::load(&dir)
                .with_context(|| format!("loading reservoir {}", dir.display()));
        }
    }
    let spec = reservoir_spec(cfg);
    log::info!(
        "training a {}-node reservoir (ρ {}, leak {}, λ {}) on {} steps",
        spec.n_reservoir,
        spec.spectral_radius,
        spec.leak,
        spec.ridge_lambda,
        cfg.surrogate.train_steps
    );
    let train = ds.segment(SplitLabel::Train, Phase::Training)?;
    let n = cfg.surrogate.train_steps.min(train.len() - 1);
    let mut model = build_reservoir::<f64>(&spec, SURROGATE_DIM)?;
    let report = train_readout(
        &mut model,
        &train.segment(0..n),
        &train.segment(1..n + 1),
        cfg.surrogate.washout,
    )?;
    log::info!("readout one-step training RMSE {:.4}", report.train_rmse);
    model.save(&dir)?;
    write_json(&stamp, &settings)?;
    Ok(model)
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn of_method<'a>(records: &'a [Vec<TrialRecord>], m: Method) -> Vec<&'a TrialRecord> {
    records
        .iter()
        .filter_map(|t| t.iter().find(|r| r.result.method == m.name()))
        .collect()
}

fn extra_mean(recs: &[&TrialRecord], key: &str) -> f64 {
    mean(recs.iter().filter_map(|r| r.extra.get(key).copied()))
}

/// The Backprop-4DVar variant compared against incremental 4D-Var.
fn challenger(methods: &[Method]) -> Option<Method> {
    [Method::BackpropApprox, Method::BackpropExact]
        .into_iter()
        .find(|m| methods.contains(m))
        .filter(|_| methods.contains(&Method::Incremental))
}

pub fn cell_dir(group: &Path, obs: usize, noise: f64) -> PathBuf {
    group.join(format!("obs{obs}_noise{noise}"))
}

/// Observation-coverage × noise grid on Lorenz-96.
pub fn run_heatmap(cfg: &ExperimentConfig) -> Result<Table> {
    let dim = cfg.dims[0];
    let ds = load_or_generate(cfg, System::Lorenz96, dim)?;
    let ctx = l96_context(&ds, Phase::Testing)?;
    let group = cfg.out_dir.join("heatmap");
    let mut header: Vec<String> = vec!["obs".into(), "noise".into(), "trials".into()];
    for m in &cfg.methods {
        header.extend([
            format!("rmse_{m}"),
            format!("time_s_{m}"),
            format!("diverged_{m}"),
        ]);
    }
    let versus = challenger(&cfg.methods);
    if let Some(c) = versus {
        header.extend(
            ["normalized_diff", "t", "p", "significant"]
                .iter()
                .map(|h| format!("{h}_{c}_vs_incremental")),
        );
    }
    let mut table = Table::new(header);
    for (obs, noise) in cfg.heatmap_cells() {
        ensure!(obs <= dim, "cannot observe {obs} of {dim} components");
        log::info!("heatmap cell: {obs} observations, noise {noise}");
        let records = par_trials(cfg, |i| {
            Ok(ctx
                .run_trial(cfg, i, obs, noise, &cfg.methods, cfg.lr, &|_| usize::MAX)?
                .records)
        })?;
        let dir = cell_dir(&group, obs, noise);
        for r in &records {
            write_records(&dir, r)?;
        }
        let mut row = vec![obs.to_string(), num(noise), cfg.trials.to_string()];
        for &m in &cfg.methods {
            let recs = of_method(&records, m);
            row.push(num(mean(recs.iter().map(|r| r.result.aggregate_rmse))));
            row.push(num(mean(recs.iter().map(|r| r.result.wall_time_s))));
            row.push(
                recs.iter()
                    .map(|r| r.result.diverged_windows)
                    .sum::<usize>()
                    .to_string(),
            );
        }
        if let Some(c) = versus {
            let a: Vec<f64> = of_method(&records, c)
                .iter()
                .map(|r| r.result.aggregate_rmse)
                .collect();
            let b: Vec<f64> = of_method(&records, Method::Incremental)
                .iter()
                .map(|r| r.result.aggregate_rmse)
                .collect();
            row.push(num(mean_normalized_difference(&a, &b)));
            match paired_t_test(&a, &b, cfg.alpha) {
                Ok(t) => row.extend([num(t.t), num(t.p), t.significant.to_string()]),
                Err(_) => row.extend(["NaN".into(), "NaN".into(), "false".into()]),
            }
        }
        table.push(row);
    }
    table.write_csv(&group.join("summary.csv"))?;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingOutput {
    pub summary: Table,
    /// Log-log slope of mean per-trial solve time against dimension.
    pub slopes: Vec<(Method, f64)>,
}

impl ScalingOutput {
    pub fn slope(&self, m: Method) -> Option<f64> {
        self.slopes.iter().find(|(k, _)| *k == m).map(|(_, s)| *s)
    }

    pub fn value(&self, dim: usize, m: Method, col: &str) -> Option<f64> {
        let (d, mc, c) = (
            self.summary.column("dim")?,
            self.summary.column("method")?,
            self.summary.column(col)?,
        );
        self.summary
            .rows
            .iter()
            .find(|r| r[d] == dim.to_string() && r[mc] == m.name())
            .and_then(|r| r[c].parse().ok())
    }
}

/// Runtime and accuracy against Lorenz-96 dimension.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ScalingOutput> {
    let group = cfg.out_dir.join("scaling");
    let mut summary = Table::new([
        "dim",
        "method",
        "trials",
        "rmse_mean",
        "rmse_ci95",
        "time_s_mean",
        "time_s_ci95",
        "window_time_s_mean",
        "diverged",
    ]);
    let mut times: Vec<(Method, Vec<f64>)> = cfg.methods.iter().map(|&m| (m, Vec::new())).collect();
    for &dim in &cfg.dims {
        let ds = load_or_generate(cfg, System::Lorenz96, dim)?;
        let ctx = l96_context(&ds, Phase::Testing)?;
        let n_obs = cfg.n_obs(dim);
        log::info!("scaling: dim {dim}, {n_obs} observations");
        let records = par_trials(cfg, |i| {
            Ok(ctx
                .run_trial(cfg, i, n_obs, cfg.noise_sd, &cfg.methods, cfg.lr, &|_| {
                    usize::MAX
                })?
                .records)
        })?;
        let dir = group.join(format!("dim{dim}"));
        for r in &records {
            write_records(&dir, r)?;
        }
        for (m, t) in times.iter_mut() {
            let recs = of_method(&records, *m);
            let rmse = mean_ci95(
                &recs
                    .iter()
                    .map(|r| r.result.aggregate_rmse)
                    .collect::<Vec<_>>(),
            );
            let wall = mean_ci95(
                &recs
                    .iter()
                    .map(|r| r.result.wall_time_s)
                    .collect::<Vec<_>>(),
            );
            t.push(wall.mean);
            summary.push(vec![
                dim.to_string(),
                m.name().into(),
                recs.len().to_string(),
                num(rmse.mean),
                num(rmse.half_width),
                num(wall.mean),
                num(wall.half_width),
                num(mean(recs.iter().map(|r| r.mean_window_time_s))),
                recs.iter()
                    .map(|r| r.result.diverged_windows)
                    .sum::<usize>()
                    .to_string(),
            ]);
        }
    }
    let dims: Vec<f64> = cfg.dims.iter().map(|&d| d as f64).collect();
    let mut slopes = Vec::new();
    let mut slope_table = Table::new(["method", "loglog_time_slope"]);
    for (m, t) in &times {
        if *m == Method::None {
            continue;
        }
        if let Ok(s) = loglog_slope(&dims, t) {
            slopes.push((*m, s));
            slope_table.push(vec![m.name().into(), num(s)]);
        }
    }
    summary.write_csv(&group.join("summary.csv"))?;
    slope_table.write_csv(&group.join("slopes.csv"))?;
    Ok(ScalingOutput { summary, slopes })
}

/// QG twin experiment at each requested dimension.
pub fn run_qg(cfg: &ExperimentConfig) -> Result<Table> {
    let group = cfg.out_dir.join("qg");
    let mut summary = Table::new([
        "dim",
        "method",
        "trials",
        "windows",
        "rmse_mean",
        "rmse_ratio_to_free_run",
        "time_s_mean",
        "window_time_s_mean",
        "analysis_gap_vs_incremental_max",
        "analysis_gap_vs_incremental_rms",
        "diverged",
        "status",
    ]);
    for &dim in &cfg.dims {
        let ds = load_or_generate(cfg, System::Qg, dim)?;
        let ctx = qg_context(&ds, Phase::Testing)?;
        let dir = group.join(dim.to_string());
        for &m in &cfg.methods {
            if let Some(reason) = ctx.refusal(cfg, m) {
                log::warn!("{m} refused at dim {dim}: {reason}");
                write_json(
                    &dir.join(m.name()).join("refused.json"),
                    &json!({ "method": m, "dim": dim, "reason": reason }),
                )?;
                let mut row = vec![String::new(); summary.header.len()];
                row[0] = dim.to_string();
                row[1] = m.name().into();
                row[11] = format!("refused: {reason}");
                summary.push(row);
            }
        }
        let reference = cfg.qg.reference_windows.unwrap_or(usize::MAX);
        let windows_for = move |m: Method| match m {
            Method::Incremental | Method::BackpropExact => reference,
            _ => usize::MAX,
        };
        let n_obs = cfg.n_obs(dim);
        log::info!("qg: dim {dim}, {n_obs} observations");
        let runs: Vec<TrialRun> = par_trials(cfg, |i| {
            let run = ctx.run_trial(
                cfg,
                i,
                n_obs,
                cfg.qg.obs_noise_frac,
                &cfg.methods,
                cfg.lr,
                &windows_for,
            )?;
            if i == 0 {
                write_snapshots(&dir, dim, &run, cfg.qg.snapshot_every)?;
            }
            // only the records are kept past this point
            Ok(TrialRun {
                results: Vec::new(),
                ..run
            })
        })?;
        let records: Vec<Vec<TrialRecord>> = runs.into_iter().map(|r| r.records).collect();
        for r in &records {
            write_records(&dir, r)?;
        }
        for &m in &cfg.methods {
            let recs = of_method(&records, m);
            if recs.is_empty() {
                continue;
            }
            summary.push(vec![
                dim.to_string(),
                m.name().into(),
                recs.len().to_string(),
                recs[0].windows.to_string(),
                num(mean(recs.iter().map(|r| r.result.aggregate_rmse))),
                num(extra_mean(&recs, "rmse_ratio_to_free_run")),
                num(mean(recs.iter().map(|r| r.result.wall_time_s))),
                num(mean(recs.iter().map(|r| r.mean_window_time_s))),
                num(extra_mean(&recs, "analysis_gap_vs_incremental_max")),
                num(extra_mean(&recs, "analysis_gap_vs_incremental_rms")),
                recs.iter()
                    .map(|r| r.result.diverged_windows)
                    .sum::<usize>()
                    .to_string(),
                "ok".into(),
            ]);
        }
    }
    summary.write_csv(&group.join("summary.csv"))?;
    Ok(summary)
}

/// Gridded truth and per-method error fields, `[layer, y, x]`.
fn write_snapshots(dir: &Path, dim: usize, run: &TrialRun, every: usize) -> Result<()> {
    if every == 0 {
        return Ok(());
    }
    let n = ((dim / 2) as f64).sqrt().round() as usize;
    let truth = &run.setup.nature;
    for t in (0..truth.len()).step_by(every) {
        let meta = json!({ "step": t, "quantity": "potential vorticity", "trial": 0 });
        write_array(
            &dir.join("truth").join("fields"),
            &t.to_string(),
            vec![2, n, n],
            meta,
            truth.state(t),
        )?;
    }
    for (m, res) in &run.results {
        for t in (0..res.estimates.len()).step_by(every) {
            let err: Vec<f64> = res
                .estimates
                .state(t)
                .iter()
                .zip(truth.state(t))
                .map(|(a, b)| a - b)
                .collect();
            let meta =
                json!({ "step": t, "quantity": "estimate minus truth", "method": m, "trial": 0 });
            write_array(
                &dir.join(m.name()).join("fields"),
                &t.to_string(),
                vec![2, n, n],
                meta,
                &err,
            )?;
        }
    }
    Ok(())
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory<f64>) -> Result<()> {
    let mut t = Table::new(
        std::iter::once("step".to_string()).chain((0..traj.dim()).map(|i| format!("x{i}"))),
    );
    for (k, s) in traj.states().enumerate() {
        t.push(
            std::iter::once(k.to_string())
                .chain(s.iter().map(|&v| num(v)))
                .collect(),
        );
    }
    t.write_csv(path)
}

/// Assimilation in the state space of a reservoir surrogate.
pub fn run_surrogate(cfg: &ExperimentConfig) -> Result<Table> {
    if cfg.dims != [SURROGATE_DIM] {
        bail!("the surrogate experiment runs at dimension {SURROGATE_DIM}");
    }
    let ds = load_or_generate(cfg, System::ReservoirSurrogate, SURROGATE_DIM)?;
    let ctx = Arc::new(surrogate_context(cfg, &ds, Phase::Testing)?);
    let group = cfg.out_dir.join("surrogate");
    let n_obs = cfg.n_obs(SURROGATE_DIM);
    let records = par_trials(cfg, |i| {
        let run = ctx.run_trial(cfg, i, n_obs, cfg.noise_sd, &cfg.methods, cfg.lr, &|_| {
            usize::MAX
        })?;
        if i == 0 {
            write_trajectory_csv(
                &group.join("truth").join("trajectory_0.csv"),
                &run.setup.nature,
            )?;
            for (m, res) in &run.results {
                write_trajectory_csv(
                    &group.join(m.name()).join("trajectory_0.csv"),
                    &res.estimates,
                )?;
            }
            write_json(&group.join("network_0.json"), &run.setup.network)?;
        }
        Ok(run.records)
    })?;
    for r in &records {
        write_records(&group, r)?;
    }
    let mut summary = Table::new([
        "method",
        "trials",
        "rmse_mean",
        "observed_rmse_mean",
        "unobserved_rmse_mean",
        "rmse_ratio_to_free_run",
        "time_s_mean",
        "diverged",
    ]);
    for &m in &cfg.methods {
        let recs = of_method(&records, m);
        summary.push(vec![
            m.name().into(),
            recs.len().to_string(),
            num(mean(recs.iter().map(|r| r.result.aggregate_rmse))),
            num(extra_mean(&recs, "observed_rmse")),
            num(extra_mean(&recs, "unobserved_rmse")),
            num(extra_mean(&recs, "rmse_ratio_to_free_run")),
            num(mean(recs.iter().map(|r| r.result.wall_time_s))),
            recs.iter()
                .map(|r| r.result.diverged_windows)
                .sum::<usize>()
                .to_string(),
        ]);
    }
    summary.write_csv(&group.join("summary.csv"))?;
    Ok(summary)
}

/// Context on the validation (`Phase::Tuning`) or test split.
pub fn context_for(
    cfg: &ExperimentConfig,
    system: System,
    dim: usize,
    phase: Phase,
) -> Result<Context> {
    match system {
        System::Lorenz96 => l96_context(&load_or_generate(cfg, system, dim)?, phase),
        System::Qg => qg_context(&load_or_generate(cfg, system, dim)?, phase),
        System::ReservoirSurrogate => {
            surrogate_context(cfg, &load_or_generate(cfg, system, SURROGATE_DIM)?, phase)
        }
    }
}
