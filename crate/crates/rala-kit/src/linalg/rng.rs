//! All randomness in the crate flows from one explicit 64-bit seed through
//! ChaCha8, a counter-based stream: identical seeds give bit-identical
//! matrices on one platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream for a named sub-purpose of a run seed.
pub fn stream_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard-normal matrix. Draws are always f64, then cast, so f32 and f64
/// matrices from the same seed agree to rounding.
pub fn randn_matrix<T: Scalar>(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix<T> {
    let data = (0..rows * cols)
        .map(|_| T::from_config(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// Uniform matrix on [lo, hi).
pub fn uniform_matrix<T: Scalar>(
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
    rng: &mut SeededRng,
) -> Matrix<T> {
    let data = (0..rows * cols)
        .map(|_| T::from_config(rng.gen_range(lo..hi)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// U (rows x r) times W (r x cols) with standard-normal factors: rank r with
/// probability 1.
pub fn low_rank_factory<T: Scalar>(
    rows: usize,
    cols: usize,
    r: usize,
    seed: u64,
) -> Result<Matrix<T>> {
    if r == 0 || r > rows.min(cols) {
        return Err(Error::invalid(
            "low_rank_factory",
            format!("rank {r} out of range for {rows}x{cols}"),
        ));
    }
    let mut rng = seeded_rng(seed);
    let u: Matrix<T> = randn_matrix(rows, r, &mut rng);
    let w: Matrix<T> = randn_matrix(r, cols, &mut rng);
    u.matmul(&w)
}

/// Strictly positive rank-r matrix: both factors drawn uniform on
/// [0.1, 1.1). Used to stand in for kernelized keys at a chosen rank.
pub fn positive_low_rank<T: Scalar>(
    rows: usize,
    cols: usize,
    r: usize,
    seed: u64,
) -> Result<Matrix<T>> {
    if r == 0 || r > rows.min(cols) {
        return Err(Error::invalid(
            "positive_low_rank",
            format!("rank {r} out of range for {rows}x{cols}"),
        ));
    }
    let mut rng = seeded_rng(seed);
    let u: Matrix<T> = uniform_matrix(rows, r, 0.1, 1.1, &mut rng);
    let w: Matrix<T> = uniform_matrix(r, cols, 0.1, 1.1, &mut rng);
    u.matmul(&w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{numerical_rank, DEFAULT_REL_EPS};

    #[test]
    fn deterministic_per_seed() {
        let a: Matrix<f64> = low_rank_factory(8, 6, 3, 42).unwrap();
        let b: Matrix<f64> = low_rank_factory(8, 6, 3, 42).unwrap();
        assert_eq!(a, b);
        let c: Matrix<f64> = low_rank_factory(8, 6, 3, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rank_one_rows_proportional() {
        let a: Matrix<f64> = low_rank_factory(5, 4, 1, 7).unwrap();
        let base = a.row(0);
        for r in 1..5 {
            let ratio = a.get(r, 0) / base[0];
            for c in 1..4 {
                assert!((a.get(r, c) - ratio * base[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_rank_when_r_is_min_dim() {
        let a: Matrix<f64> = low_rank_factory(6, 4, 4, 11).unwrap();
        assert_eq!(numerical_rank(&a, DEFAULT_REL_EPS).unwrap(), 4);
    }

    #[test]
    fn full_scale_construction() {
        let a: Matrix<f64> = low_rank_factory(196, 64, 8, 7).unwrap();
        assert_eq!(numerical_rank(&a, DEFAULT_REL_EPS).unwrap(), 8);
    }

    #[test]
    fn rank_out_of_range() {
        assert!(low_rank_factory::<f64>(4, 4, 5, 0).is_err());
        assert!(low_rank_factory::<f64>(4, 4, 0, 0).is_err());
    }

    #[test]
    fn positive_low_rank_is_positive() {
        let a: Matrix<f64> = positive_low_rank(20, 10, 4, 3).unwrap();
        assert!(a.data().iter().all(|&x| x > 0.0));
        assert_eq!(numerical_rank(&a, DEFAULT_REL_EPS).unwrap(), 4);
    }
}
