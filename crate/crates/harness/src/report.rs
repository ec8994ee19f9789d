//! Flattens every per-trial record under a results directory into one CSV.

use std::path::Path;

use anyhow::{Context as _, Result};
use walkdir::WalkDir;

use crate::runner::TrialRecord;
use crate::table::{num, Table};

pub fn collect(results: &Path) -> Result<Table> {
    let mut t = Table::new([
        "group",
        "method",
        "trial",
        "seed",
        "dim",
        "n_obs",
        "noise",
        "windows",
        "aggregate_rmse",
        "wall_time_s",
        "mean_window_time_s",
        "diverged_windows",
    ]);
    for entry in WalkDir::new(results).sort_by_file_name() {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy();
        if !(entry.file_type().is_file() && name.starts_with("trial_") && name.ends_with(".json")) {
            continue;
        }
        let path = entry.path();
        let text = std::fs::read_to_string(path)?;
        let r: TrialRecord = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a trial record", path.display()))?;
        // the group is the directory above the method directory
        let group = path
            .parent()
            .and_then(Path::parent)
            .and_then(|g| g.strip_prefix(results).ok())
            .map(|g| g.to_string_lossy().into_owned())
            .unwrap_or_default();
        t.push(vec![
            group,
            r.result.method.clone(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.dim.to_string(),
            r.n_obs.to_string(),
            num(r.noise),
            r.windows.to_string(),
            num(r.result.aggregate_rmse),
            num(r.result.wall_time_s),
            num(r.mean_window_time_s),
            r.result.diverged_windows.to_string(),
        ]);
    }
    Ok(t)
}

pub fn write_report(results: &Path, out: &Path) -> Result<usize> {
    let t = collect(results)?;
    t.write_csv(out)?;
    Ok(t.rows.len())
}
