//! Differentiable dynamical systems.

pub mod lorenz96;
pub mod qg;

pub use lorenz96::{l96_tendency, L96Tangent, Lorenz96, Lorenz96Params};
pub use qg::{QgModel, QgParams, SpectralFilter, QG_DEFAULT_DT};
