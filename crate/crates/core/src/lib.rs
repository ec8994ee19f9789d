//! Variational data assimilation on a tape-based reverse-mode autodiff engine.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the common double-precision instantiation.

pub mod ad;
pub mod assim;
pub mod data;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod obsgen;
pub mod scalar;
pub mod solvers;
pub mod surrogate;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use trajectory::Trajectory;

pub type Tape64 = ad::Tape<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type DenseMatrix64 = linalg::DenseMatrix<f64>;
pub type Lorenz96_64 = models::Lorenz96<f64>;
pub type QgModel64 = models::QgModel<f64>;
