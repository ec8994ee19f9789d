//! Experiment configuration: JSON files with per-experiment defaults, then
//! command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use varda_core::assim::{LrSchedule, Method};
use varda_core::obsgen::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    Lorenz96,
    Qg,
    ReservoirSurrogate,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Lorenz96 => "lorenz96",
            System::Qg => "qg",
            System::ReservoirSurrogate => "reservoir-surrogate",
        }
    }
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Random-search space for the Backprop-4DVar step schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    /// `α₀` is drawn log-uniformly from `[lr_min, lr_max]`.
    pub lr_min: f64,
    pub lr_max: f64,
    /// The decay factor is drawn uniformly from `[decay_min, decay_max]`.
    pub decay_min: f64,
    pub decay_max: f64,
    pub samples: usize,
    /// Spend the first sample on the (0.5, 0.5) default when it lies in the
    /// space, so the search never returns something worse on validation.
    pub include_default: bool,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr_min: (-5.0f64).exp(),
            lr_max: 1.0,
            decay_min: 0.1,
            decay_max: 0.99,
            samples: 50,
            include_default: true,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        ensure!(
            [self.lr_min, self.lr_max, self.decay_min, self.decay_max]
                .into_iter()
                .all(unit),
            "search bounds must lie in (0, 1]"
        );
        ensure!(
            self.lr_min <= self.lr_max && self.decay_min <= self.decay_max,
            "search bounds are inverted"
        );
        ensure!(self.samples >= 1, "the search needs at least one sample");
        Ok(())
    }

    pub fn contains(&self, lr: &LrSchedule) -> bool {
        (self.lr_min..=self.lr_max).contains(&lr.alpha0)
            && (self.decay_min..=self.decay_max).contains(&lr.decay)
    }
}

/// Reservoir construction and training for the surrogate experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSettings {
    pub n_reservoir: usize,
    pub sparsity: f64,
    pub spectral_radius: f64,
    pub sigma_u: f64,
    pub leak: f64,
    pub bias_scale: f64,
    pub ridge_lambda: f64,
    pub washout: usize,
    /// Length of the train split of the surrogate's dataset.
    pub train_steps: usize,
    /// Teacher-forced steps before each assimilation segment.
    pub sync_steps: usize,
    pub sync_noise_sd: f64,
    /// Background SD as a multiple of each reservoir node's training SD.
    pub b_scale: f64,
    pub b_floor: f64,
}

impl Default for SurrogateSettings {
    fn default() -> Self {
        Self {
            n_reservoir: 2000,
            sparsity: 0.99,
            spectral_radius: 0.3,
            sigma_u: 0.9877,
            leak: 1.0,
            bias_scale: 1.0,
            ridge_lambda: 1e-2,
            washout: 200,
            train_steps: 50_000,
            sync_steps: 1000,
            sync_noise_sd: 0.001,
            b_scale: 0.1,
            b_floor: 1e-8,
        }
    }
}

/// Error statistics for the QG twin experiment, as fractions of the
/// per-component spin-up SD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QgSettings {
    pub obs_noise_frac: f64,
    pub r_frac: f64,
    pub b_frac: f64,
    pub ic_frac: f64,
    /// Grid RMS of the random initial PV field.
    pub ic_amplitude: f64,
    /// Step interval of the gridded error snapshots (0 disables them).
    pub snapshot_every: usize,
    /// When set, the reference methods (incremental and exact-Hessian)
    /// only cycle this many windows; their per-window solve time is still
    /// comparable with the full runs.
    pub reference_windows: Option<usize>,
}

impl Default for QgSettings {
    fn default() -> Self {
        Self {
            obs_noise_frac: 0.1,
            r_frac: 0.125,
            b_frac: 0.05,
            ic_frac: 0.1,
            ic_amplitude: 2e-6,
            snapshot_every: 100,
            reference_windows: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: System,
    pub dims: Vec<usize>,
    /// Heatmap grid: observation counts × noise SDs, unless `cells` is set.
    pub obs_counts: Vec<usize>,
    pub noise_levels: Vec<f64>,
    pub cells: Vec<(usize, f64)>,
    /// Observed fraction of the state for the non-heatmap experiments.
    pub obs_fraction: f64,
    /// Observation noise SD (Lorenz-96), or fraction of climatological SD
    /// (surrogate).
    pub noise_sd: f64,
    /// Assumed observation-error SD relative to the true noise SD.
    pub r_inflation: f64,
    /// Background SD relative to the observation noise (Lorenz-96).
    pub b_ratio: f64,
    pub every_k: usize,
    pub window_steps: usize,
    pub n_windows: usize,
    pub methods: Vec<Method>,
    pub iterations: usize,
    pub lr: LrSchedule,
    pub trials: usize,
    pub seed: u64,
    /// Explicit per-trial seeds; derived from `seed` when empty.
    pub seeds: Vec<u64>,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Generate missing datasets instead of failing.
    pub auto_generate: bool,
    /// Largest dimension for which the exact Hessian is formed.
    pub dense_cap: usize,
    pub inner_tol: f64,
    pub inner_max_iter: Option<usize>,
    pub alpha: f64,
    pub search: SearchSpace,
    pub surrogate: SurrogateSettings,
    pub qg: QgSettings,
    pub quick: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: System::Lorenz96,
            dims: vec![36],
            obs_counts: vec![6, 12, 18, 24, 30, 36],
            noise_levels: vec![0.1, 0.25, 0.5, 1.0, 1.5, 2.0],
            cells: Vec::new(),
            obs_fraction: 0.5,
            noise_sd: 0.5,
            r_inflation: 1.25,
            b_ratio: 1.0 / 1.5,
            every_k: 5,
            window_steps: 10,
            n_windows: 60,
            methods: vec![Method::None, Method::Incremental, Method::BackpropApprox],
            iterations: 3,
            lr: LrSchedule::default(),
            trials: 30,
            seed: 1,
            seeds: Vec::new(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("results"),
            auto_generate: false,
            dense_cap: varda_core::ad::DEFAULT_DENSE_CAP,
            inner_tol: 1e-8,
            inner_max_iter: None,
            alpha: 0.01,
            search: SearchSpace::default(),
            surrogate: SurrogateSettings::default(),
            qg: QgSettings::default(),
            quick: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Heatmap,
    Scaling,
    Qg,
    Surrogate,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Heatmap => "heatmap",
            Experiment::Scaling => "scaling",
            Experiment::Qg => "qg",
            Experiment::Surrogate => "surrogate",
        }
    }

    pub fn for_system(system: System) -> Self {
        match system {
            System::Lorenz96 => Experiment::Heatmap,
            System::Qg => Experiment::Qg,
            System::ReservoirSurrogate => Experiment::Surrogate,
        }
    }
}

impl ExperimentConfig {
    /// Defaults of one experiment.
    pub fn defaults(exp: Experiment) -> Self {
        let base = Self::default();
        match exp {
            Experiment::Heatmap => base,
            Experiment::Scaling => Self {
                dims: vec![6, 20, 36, 72, 144, 256],
                n_windows: 20,
                methods: vec![Method::Incremental, Method::BackpropApprox],
                trials: 50,
                auto_generate: true,
                ..base
            },
            Experiment::Qg => Self {
                system: System::Qg,
                dims: vec![512],
                every_k: 3,
                window_steps: 6,
                n_windows: 730,
                methods: vec![
                    Method::None,
                    Method::Incremental,
                    Method::BackpropApprox,
                    Method::BackpropExact,
                ],
                trials: 3,
                search: SearchSpace {
                    samples: 20,
                    ..SearchSpace::default()
                },
                ..base
            },
            Experiment::Surrogate => Self {
                system: System::ReservoirSurrogate,
                dims: vec![20],
                noise_sd: 0.1,
                every_k: 3,
                window_steps: 9,
                n_windows: 100,
                methods: vec![Method::None, Method::BackpropApprox],
                trials: 5,
                search: SearchSpace {
                    samples: 20,
                    ..SearchSpace::default()
                },
                ..base
            },
        }
    }

    /// Shrinks the run to a smoke-test size.
    pub fn apply_quick(&mut self, exp: Experiment) {
        self.quick = true;
        self.trials = self.trials.min(2);
        self.search.samples = self.search.samples.min(4);
        match exp {
            Experiment::Heatmap => {
                if self.cells.is_empty() {
                    self.cells = vec![(18, 0.5)];
                }
                self.n_windows = self.n_windows.min(30);
            }
            Experiment::Scaling => {
                self.dims.retain(|&d| d <= 20);
                if self.dims.is_empty() {
                    self.dims = vec![6, 20];
                }
                self.n_windows = self.n_windows.min(10);
            }
            Experiment::Qg => self.n_windows = self.n_windows.min(20),
            Experiment::Surrogate => {
                self.n_windows = self.n_windows.min(20);
                self.surrogate.n_reservoir = self.surrogate.n_reservoir.min(400);
                self.surrogate.train_steps = self.surrogate.train_steps.min(10_000);
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Loads `path` over the experiment defaults (fields absent from the
    /// file keep their defaults).
    pub fn load_over(exp: Experiment, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let mut merged = serde_json::to_value(Self::defaults(exp))?;
        merge(&mut merged, file);
        serde_json::from_value(merged).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Heatmap cells in grid order.
    pub fn heatmap_cells(&self) -> Vec<(usize, f64)> {
        if !self.cells.is_empty() {
            return self.cells.clone();
        }
        self.obs_counts
            .iter()
            .flat_map(|&o| self.noise_levels.iter().map(move |&n| (o, n)))
            .collect()
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seeds
            .get(trial)
            .copied()
            .unwrap_or_else(|| mix_seed(self.seed, trial as u64))
    }

    pub fn inner(&self) -> varda_core::solvers::BicgstabSettings {
        varda_core::solvers::BicgstabSettings {
            tol: self.inner_tol,
            max_iter: self.inner_max_iter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.dims.is_empty(), "at least one dimension is required");
        ensure!(self.trials >= 1, "at least one trial is required");
        ensure!(
            self.seeds.is_empty() || self.seeds.len() >= self.trials,
            "{} seeds given for {} trials",
            self.seeds.len(),
            self.trials
        );
        ensure!(
            self.every_k >= 1 && self.window_steps >= 1 && self.n_windows >= 1,
            "window settings must be positive"
        );
        ensure!(self.iterations >= 1, "at least one iteration per window");
        ensure!(
            self.obs_fraction > 0.0 && self.obs_fraction <= 1.0,
            "observed fraction must lie in (0, 1]"
        );
        ensure!(
            self.noise_sd > 0.0 && self.r_inflation > 0.0 && self.b_ratio > 0.0,
            "noise settings must be positive"
        );
        ensure!(self.inner_tol > 0.0, "inner tolerance must be positive");
        ensure!(!self.methods.is_empty(), "no methods selected");
        ensure!(
            self.alpha > 0.0 && self.alpha < 1.0,
            "significance level must lie in (0, 1)"
        );
        self.lr.validate().map_err(anyhow::Error::from)?;
        self.search.validate()?;
        for &(o, n) in &self.heatmap_cells() {
            if o == 0 || !(n > 0.0) {
                bail!("heatmap cell {o}:{n} needs a positive count and noise");
            }
        }
        Ok(())
    }

    /// Number of observed components at dimension `dim`.
    pub fn n_obs(&self, dim: usize) -> usize {
        ((dim as f64 * self.obs_fraction).round() as usize).clamp(1, dim)
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `"18:0.5,6:0.1"` → `[(18, 0.5), (6, 0.1)]`.
pub fn parse_cells(s: &str) -> Result<Vec<(usize, f64)>> {
    s.split(',')
        .filter(|c| !c.trim().is_empty())
        .map(|cell| {
            let (o, n) = cell
                .split_once(':')
                .with_context(|| format!("cell `{cell}` is not of the form <obs>:<noise>"))?;
            Ok((
                o.trim()
                    .parse()
                    .with_context(|| format!("bad observation count in `{cell}`"))?,
                n.trim()
                    .parse()
                    .with_context(|| format!("bad noise level in `{cell}`"))?,
            ))
        })
        .collect()
}

pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',')
        .map(|m| Method::parse(m.trim()).with_context(|| format!("unknown method `{m}`")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_parse_and_reject_garbage() {
        assert_eq!(
            parse_cells("18:0.5, 6:2").unwrap(),
            vec![(18, 0.5), (6, 2.0)]
        );
        assert!(parse_cells("18-0.5").is_err());
        assert!(parse_cells("x:0.5").is_err());
    }

    #[test]
    fn file_values_override_defaults_field_by_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"trials": 4, "lr": {"alpha0": 0.9}, "search": {"samples": 7}}"#,
        )
        .unwrap();
        let cfg = ExperimentConfig::load_over(Experiment::Scaling, &path).unwrap();
        assert_eq!(cfg.trials, 4);
        assert_eq!(
            cfg.lr,
            LrSchedule {
                alpha0: 0.9,
                decay: 0.5
            }
        );
        assert_eq!(cfg.search.samples, 7);
        assert_eq!(cfg.dims, vec![6, 20, 36, 72, 144, 256]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"trails": 4}"#).unwrap();
        assert!(ExperimentConfig::load_over(Experiment::Heatmap, &path).is_err());
    }

    #[test]
    fn seeds_list_must_cover_trials() {
        let cfg = ExperimentConfig {
            trials: 3,
            seeds: vec![1, 2],
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(
            ExperimentConfig::default().trial_seed(0),
            ExperimentConfig::default().trial_seed(0)
        );
        assert_ne!(
            ExperimentConfig::default().trial_seed(0),
            ExperimentConfig::default().trial_seed(1)
        );
    }

    #[test]
    fn defaults_validate() {
        for exp in [
            Experiment::Heatmap,
            Experiment::Scaling,
            Experiment::Qg,
            Experiment::Surrogate,
        ] {
            ExperimentConfig::defaults(exp).validate().unwrap();
            let mut q = ExperimentConfig::defaults(exp);
            q.apply_quick(exp);
            q.validate().unwrap();
        }
    }
}
