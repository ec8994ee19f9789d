//! Nature runs, their train/validation/transient/test split, and on-disk
//! persistence.
//!
//! Every array is stored as two files: `<stem>.bin`, the raw little-endian
//! `f64` payload, and `<stem>.json`, a header carrying a magic string, the
//! format version, dtype, shape and free-form metadata.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{check_len, Error, Result};
use crate::integrate::Dynamics;
use crate::trajectory::Trajectory;

pub const MAGIC: &str = "VARDA-ARRAY";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f64-le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub magic: String,
    pub version: u32,
    pub dtype: String,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub metadata: Value,
}

impl ArrayHeader {
    pub fn new(shape: Vec<usize>, metadata: Value) -> Self {
        Self {
            magic: MAGIC.to_owned(),
            version: FORMAT_VERSION,
            dtype: DTYPE.to_owned(),
            shape,
            metadata,
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

fn stem_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}.json")),
        dir.join(format!("{stem}.bin")),
    )
}

/// Writes `values` with `shape` and `metadata` as `<dir>/<stem>.{json,bin}`.
pub fn write_array(
    dir: &Path,
    stem: &str,
    shape: Vec<usize>,
    metadata: Value,
    values: &[f64],
) -> Result<()> {
    let header = ArrayHeader::new(shape, metadata);
    check_len("array payload", header.element_count(), values.len())?;
    fs::create_dir_all(dir)?;
    let (json, bin) = stem_paths(dir, stem);
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(&bin)?;
    f.write_all(&bytes)?;
    let text = serde_json::to_string_pretty(&header).map_err(|e| Error::Header(e.to_string()))?;
    fs::write(&json, text)?;
    Ok(())
}

/// Reads and validates an array written by [`write_array`].
pub fn read_array(dir: &Path, stem: &str) -> Result<(ArrayHeader, Vec<f64>)> {
    let (json, bin) = stem_paths(dir, stem);
    let text = fs::read_to_string(&json)?;
    let header = parse_header(&text)?;
    let bytes = fs::read(&bin)?;
    let expected = header.element_count() as u64 * 8;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::Header(format!(
            "shape {:?} describes {expected} bytes but the payload has {found}",
            header.shape
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, values))
}

pub fn parse_header(text: &str) -> Result<ArrayHeader> {
    let raw: Value =
        serde_json::from_str(text).map_err(|e| Error::Header(format!("malformed header: {e}")))?;
    if raw.get("magic").and_then(Value::as_str) != Some(MAGIC) {
        return Err(Error::Header(format!(
            "missing or wrong magic string (expected {MAGIC:?})"
        )));
    }
    let header: ArrayHeader =
        serde_json::from_value(raw).map_err(|e| Error::Header(format!("malformed header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    if header.dtype != DTYPE {
        return Err(Error::Header(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    Ok(header)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitLabel {
    Train,
    Validation,
    Transient,
    Test,
}

/// What an experiment is currently doing; decides which splits it may read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Fitting model parameters (surrogate readout).
    Training,
    /// Hyper-parameter search.
    Tuning,
    /// Final evaluation.
    Testing,
}

impl Phase {
    pub fn may_read(self, label: SplitLabel) -> bool {
        use SplitLabel::*;
        match self {
            Phase::Training => matches!(label, Train),
            Phase::Tuning => matches!(label, Validation),
            Phase::Testing => matches!(label, Transient | Test),
        }
    }
}

/// Contiguous, ordered step ranges into the stored (post-spin-up) run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub transient: Range<usize>,
    pub test: Range<usize>,
}

impl DatasetSplit {
    /// Consecutive ranges of the given lengths starting at step 0.
    pub fn from_lengths(train: usize, validation: usize, transient: usize, test: usize) -> Self {
        let a = train;
        let b = a + validation;
        let c = b + transient;
        Self {
            train: 0..a,
            validation: a..b,
            transient: b..c,
            test: c..c + test,
        }
    }

    /// Lorenz-96 default: no training segment, then 5,000 / 1,000 / 5,000.
    pub fn lorenz96_default() -> Self {
        Self::from_lengths(0, 5_000, 1_000, 5_000)
    }

    /// QG default: 1,095 / 4,380 / 4,380.
    pub fn qg_default() -> Self {
        Self::from_lengths(0, 1_095, 4_380, 4_380)
    }

    pub fn range(&self, label: SplitLabel) -> Range<usize> {
        match label {
            SplitLabel::Train => self.train.clone(),
            SplitLabel::Validation => self.validation.clone(),
            SplitLabel::Transient => self.transient.clone(),
            SplitLabel::Test => self.test.clone(),
        }
    }

    pub fn total(&self) -> usize {
        self.test.end
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [&self.train, &self.validation, &self.transient, &self.test];
        if parts[0].start != 0 {
            return Err(Error::contract("the split must start at step 0"));
        }
        for w in parts.windows(2) {
            if w[0].end != w[1].start {
                return Err(Error::contract(
                    "split ranges must be contiguous and ordered",
                ));
            }
        }
        if parts.iter().any(|r| r.start > r.end) {
            return Err(Error::contract("split range with start after end"));
        }
        if self.transient.is_empty() {
            log::warn!("zero-length transient: validation and test segments touch");
        }
        Ok(())
    }
}

/// Everything needed to regenerate and interpret a nature run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: String,
    pub dim: usize,
    pub seed: u64,
    pub dt: f64,
    pub spinup_steps: usize,
    pub split: DatasetSplit,
    /// Model parameters as recorded by the generator.
    pub params: Value,
    /// Per-component population SD over the stored run.
    pub climatology_sd: Vec<f64>,
    /// Per-component population SD over the spin-up segment.
    pub spinup_sd: Vec<f64>,
}

/// A nature run: `split.total() + 1` states (the last split end is included
/// so every window in the test range has its end state).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub states: Trajectory<f64>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.states.dim()
    }

    /// States of `label`'s range, plus the following state as a boundary,
    /// if `phase` may read it.
    pub fn segment(&self, label: SplitLabel, phase: Phase) -> Result<Trajectory<f64>> {
        if !phase.may_read(label) {
            return Err(Error::SplitAccess(format!(
                "{phase:?} may not read the {label:?} split"
            )));
        }
        let r = self.meta.split.range(label);
        let end = (r.end + 1).min(self.states.len());
        if r.start >= end {
            return Err(Error::contract(format!("{label:?} split is empty")));
        }
        Ok(self.states.segment(r.start..end))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = serde_json::to_value(&self.meta).map_err(|e| Error::Header(e.to_string()))?;
        write_array(
            dir,
            "nature",
            vec![self.states.len(), self.states.dim()],
            meta,
            self.states.as_flat(),
        )
    }

    /// Loads and validates a dataset, including the recorded climatology.
    pub fn load(dir: &Path) -> Result<Self> {
        let (header, values) = read_array(dir, "nature")?;
        if header.shape.len() != 2 {
            return Err(Error::Header(format!(
                "expected a 2-D shape, got {:?}",
                header.shape
            )));
        }
        let meta: DatasetMeta = serde_json::from_value(header.metadata)
            .map_err(|e| Error::Header(format!("dataset metadata: {e}")))?;
        let dim = header.shape[1];
        if meta.dim != dim {
            return Err(Error::Header(format!(
                "metadata dim {} but shape dim {dim}",
                meta.dim
            )));
        }
        let states =
            Trajectory::from_flat(dim, values).map_err(|e| Error::Header(e.to_string()))?;
        if states.len() < meta.split.total() + 1 {
            return Err(Error::Header("stored run shorter than its split".into()));
        }
        let (_, sd) = states.component_stats();
        for (a, b) in sd.iter().zip(&meta.climatology_sd) {
            if (a - b).abs() > 1e-12 * b.abs().max(1.0) {
                return Err(Error::Header(
                    "recorded climatology does not match the payload".into(),
                ));
            }
        }
        Ok(Self { meta, states })
    }
}

/// `<root>/<system>/<dim>/<seed>/`
pub fn dataset_dir(root: &Path, system: &str, dim: usize, seed: u64) -> PathBuf {
    root.join(system)
        .join(dim.to_string())
        .join(seed.to_string())
}

/// Spins `model` up from `x0` for `spinup_steps` (discarded) and stores the
/// next `split.total()` steps.
pub fn generate_nature_run<M: Dynamics<f64> + ?Sized>(
    model: &M,
    x0: &[f64],
    spinup_steps: usize,
    split: DatasetSplit,
    mut meta: DatasetMeta,
) -> Result<Dataset> {
    split.validate()?;
    check_len("nature-run initial state", model.dim(), x0.len())?;
    const CHUNK: usize = 1_000;
    let n = model.dim();
    let mut x = x0.to_vec();
    let mut welford = Welford::new(n);
    welford.push(&x);
    let mut done = 0;
    while done < spinup_steps {
        let k = CHUNK.min(spinup_steps - done);
        let seg = model.forecast(&x, k).map_err(|e| match e {
            Error::Divergence { step } => Error::Divergence { step: done + step },
            other => other,
        })?;
        for s in seg.states().skip(1) {
            welford.push(s);
        }
        x = seg.last().unwrap().to_vec();
        done += k;
    }
    let states = model.forecast(&x, split.total()).map_err(|e| match e {
        Error::Divergence { step } => Error::Divergence {
            step: spinup_steps + step,
        },
        other => other,
    })?;
    let (_, sd) = states.component_stats();
    meta.dim = n;
    meta.spinup_steps = spinup_steps;
    meta.split = split;
    meta.climatology_sd = sd;
    meta.spinup_sd = welford.sd();
    Ok(Dataset { meta, states })
}

struct Welford {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(n: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    fn sd(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|s| (s / self.count.max(1.0)).sqrt())
            .collect()
    }
}
