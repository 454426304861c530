//! Dense matrix values and the numerical primitives everything else builds
//! on: products, softmax, the Elu+1 kernel, one-sided Jacobi SVD, and
//! numerical rank.

pub mod conv;
mod matrix;
mod rank;
pub mod rng;
mod svd;

pub use matrix::Matrix;
pub use rank::{numerical_rank, rank_report, RankReport, DEFAULT_REL_EPS};
pub use rng::{low_rank_factory, positive_low_rank, randn_matrix, seeded_rng, SeededRng};
pub use svd::{svd, Svd};
