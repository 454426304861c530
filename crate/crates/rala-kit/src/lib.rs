//! Rank-augmented linear attention at desk scale: the attention variants,
//! a toy hierarchical backbone built from them, rank instrumentation,
//! complexity benchmarks, and a minimal trainer proving the mechanism is
//! optimizable. Core math is generic over the scalar type; analysis and
//! training run in f64, checkpoints store f32.

pub mod analysis;
pub mod attention;
pub mod autodiff;
pub mod backbone;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double precision matrix: the analysis and training element type.
pub type Matrix64 = linalg::Matrix<f64>;
/// Single precision matrix: the checkpoint element type.
pub type Matrix32 = linalg::Matrix<f32>;
pub type Tape64 = autodiff::Tape<f64>;
