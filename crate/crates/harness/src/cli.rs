//! Command-line interface.

use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand};
use varda_core::assim::LrSchedule;

use crate::config::{parse_cells, parse_methods, Experiment, ExperimentConfig, System};
use crate::datasets::{generate_and_save, SURROGATE_DIM};
use crate::experiments::{run_heatmap, run_qg, run_scaling, run_surrogate};
use crate::report::write_report;
use crate::tune::{load_tuned, tune_lr};

#[derive(Debug, Parser)]
#[command(
    name = "varda",
    version,
    about = "Twin experiments for incremental 4D-Var and Backprop-4DVar"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config; its values override the experiment defaults and are
    /// in turn overridden by flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Results root.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset root.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Smoke-test sizes.
    #[arg(long, global = true)]
    pub quick: bool,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Comma-separated methods: none, incremental, backprop-approx, backprop-exact.
    #[arg(long, global = true)]
    pub methods: Option<String>,
    /// Step schedule as `<alpha0>:<decay>`.
    #[arg(long, global = true, conflicts_with = "tuned")]
    pub lr: Option<String>,
    /// Step schedule from a `best.json` written by `tune`.
    #[arg(long, global = true)]
    pub tuned: Option<PathBuf>,
    /// Number of assimilation windows.
    #[arg(long, global = true)]
    pub windows: Option<usize>,
    /// Gradient iterations (Backprop-4DVar) or outer loops (incremental).
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// Generate missing datasets instead of failing.
    #[arg(long, global = true)]
    pub auto_generate: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and store a nature run.
    Generate {
        #[arg(long, value_enum)]
        system: System,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Observation-coverage × noise grid on Lorenz-96.
    RunHeatmap {
        /// Cells as `<obs>:<noise>` pairs, comma separated.
        #[arg(long)]
        cells: Option<String>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Runtime and RMSE against Lorenz-96 dimension.
    RunScaling {
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
    },
    /// Two-layer QG twin experiment.
    RunQg {
        #[arg(long, value_delimiter = ',')]
        dim: Vec<usize>,
        /// Cycle only this many windows with the reference methods.
        #[arg(long)]
        reference_windows: Option<usize>,
    },
    /// Assimilation in the state space of a reservoir surrogate.
    RunSurrogate,
    /// Random search for the Backprop-4DVar step schedule.
    Tune {
        #[arg(long, value_enum)]
        system: System,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Collect every trial record under the results root into one CSV.
    Report {
        /// Defaults to `<out>/report.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_lr(s: &str) -> Result<LrSchedule> {
    let (a, d) = s.split_once(':').context("--lr takes <alpha0>:<decay>")?;
    let lr = LrSchedule {
        alpha0: a.trim().parse().context("bad alpha0")?,
        decay: d.trim().parse().context("bad decay")?,
    };
    lr.validate()?;
    Ok(lr)
}

fn default_dim(system: System) -> usize {
    match system {
        System::Lorenz96 => 36,
        System::Qg => 512,
        System::ReservoirSurrogate => SURROGATE_DIM,
    }
}

impl Cli {
    /// Defaults of `exp`, then the config file, then the flags.
    pub fn config(&self, exp: Experiment) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load_over(exp, p)?,
            None => ExperimentConfig::defaults(exp),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(d) = &self.data {
            cfg.data_dir = d.clone();
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(m) = &self.methods {
            cfg.methods = parse_methods(m)?;
        }
        if let Some(lr) = &self.lr {
            cfg.lr = parse_lr(lr)?;
        }
        if let Some(p) = &self.tuned {
            cfg.lr = load_tuned(p)?;
        }
        if let Some(w) = self.windows {
            cfg.n_windows = w;
        }
        if let Some(k) = self.iterations {
            cfg.iterations = k;
        }
        cfg.auto_generate |= self.auto_generate;
        match &self.command {
            Command::RunHeatmap { cells, dim } => {
                if let Some(c) = cells {
                    cfg.cells = parse_cells(c)?;
                }
                if let Some(d) = dim {
                    cfg.dims = vec![*d];
                }
            }
            Command::RunScaling { dims } if !dims.is_empty() => cfg.dims = dims.clone(),
            Command::RunQg {
                dim,
                reference_windows,
            } => {
                if !dim.is_empty() {
                    cfg.dims = dim.clone();
                }
                if reference_windows.is_some() {
                    cfg.qg.reference_windows = *reference_windows;
                }
            }
            Command::Tune {
                samples: Some(s), ..
            } => cfg.search.samples = *s,
            _ => {}
        }
        if self.quick {
            cfg.apply_quick(exp);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate { system, dim } => {
            let cfg = cli.config(Experiment::for_system(*system))?;
            let dim = dim.unwrap_or(default_dim(*system));
            let (ds, dir) = generate_and_save(&cfg, *system, dim)?;
            println!(
                "wrote {} states of {system} dim {dim} to {}",
                ds.states.len(),
                dir.display()
            );
        }
        Command::RunHeatmap { .. } => {
            let cfg = cli.config(Experiment::Heatmap)?;
            let t = run_heatmap(&cfg)?;
            println!(
                "{} cells; summary in {}",
                t.rows.len(),
                cfg.out_dir.join("heatmap/summary.csv").display()
            );
        }
        Command::RunScaling { .. } => {
            let cfg = cli.config(Experiment::Scaling)?;
            let out = run_scaling(&cfg)?;
            for (m, s) in &out.slopes {
                println!("{m}: log-log runtime slope {s:.3}");
            }
            println!(
                "summary in {}",
                cfg.out_dir.join("scaling/summary.csv").display()
            );
        }
        Command::RunQg { .. } => {
            let cfg = cli.config(Experiment::Qg)?;
            run_qg(&cfg)?;
            println!(
                "summary in {}",
                cfg.out_dir.join("qg/summary.csv").display()
            );
        }
        Command::RunSurrogate => {
            let cfg = cli.config(Experiment::Surrogate)?;
            run_surrogate(&cfg)?;
            println!(
                "summary in {}",
                cfg.out_dir.join("surrogate/summary.csv").display()
            );
        }
        Command::Tune { system, dim, .. } => {
            let cfg = cli.config(Experiment::for_system(*system))?;
            let dim = dim.unwrap_or(default_dim(*system));
            let out = tune_lr(&cfg, *system, dim)?;
            println!(
                "best α₀ {} decay {} (validation RMSE {})",
                out.best.alpha0, out.best.decay, out.validation_rmse
            );
        }
        Command::Report { output } => {
            let root = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));
            let path = output.clone().unwrap_or_else(|| root.join("report.csv"));
            let n = write_report(&root, &path)?;
            println!("{n} trial records written to {}", path.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_defaults() {
        let cli = Cli::try_parse_from([
            "varda",
            "run-heatmap",
            "--cells",
            "18:0.5",
            "--trials",
            "3",
            "--seed",
            "9",
            "--lr",
            "0.8:0.6",
        ])
        .unwrap();
        let cfg = cli.config(Experiment::Heatmap).unwrap();
        assert_eq!(cfg.cells, vec![(18, 0.5)]);
        assert_eq!((cfg.trials, cfg.seed), (3, 9));
        assert_eq!(
            cfg.lr,
            LrSchedule {
                alpha0: 0.8,
                decay: 0.6
            }
        );
    }

    #[test]
    fn unknown_flags_and_bad_values_are_usage_errors() {
        assert!(Cli::try_parse_from(["varda", "run-heatmap", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["varda", "generate", "--system", "mars"]).is_err());
        let cli = Cli::try_parse_from(["varda", "run-scaling", "--lr", "2:0.5"]).unwrap();
        assert!(cli.config(Experiment::Scaling).is_err());
        let cli = Cli::try_parse_from(["varda", "run-scaling", "--methods", "kalman"]).unwrap();
        assert!(cli.config(Experiment::Scaling).is_err());
    }

    #[test]
    fn global_flags_work_after_the_subcommand() {
        let cli = Cli::try_parse_from([
            "varda",
            "tune",
            "--system",
            "qg",
            "--quick",
            "--samples",
            "3",
        ])
        .unwrap();
        let cfg = cli.config(Experiment::Qg).unwrap();
        assert!(cfg.quick);
        assert_eq!(cfg.search.samples, 3);
    }
}
