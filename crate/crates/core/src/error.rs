use thiserror::Error;

use crate::solvers::LinearSolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by its inputs.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A recorded value overflowed or became NaN.
    #[error("non-finite value produced at tape node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("iteration {iteration} produced a non-finite gradient")]
    GradientDivergence {
        iteration: usize,
        history: Vec<Vec<f64>>,
    },

    #[error("BiCGSTAB breakdown ({reason}) after {} iterations", report.iterations)]
    Breakdown {
        reason: &'static str,
        report: LinearSolveReport,
    },

    #[error("outer loop {outer}: {source}")]
    OuterLoop {
        outer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dense linear solve failed: {0}")]
    Singular(String),

    /// A dense object would exceed the configured size cap.
    #[error("dimension {dim} exceeds the dense cap {cap}")]
    Resource { dim: usize, cap: usize },

    #[error("dataset header: {0}")]
    Header(String),

    #[error("dataset version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("dataset payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("split access denied: {0}")]
    SplitAccess(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
