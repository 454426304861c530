use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};
use crate::scalar::Scalar;

pub const DEFAULT_REL_EPS: f64 = 1e-6;

/// Numerical rank of a named matrix: the count of singular values strictly
/// above `rel_eps * sigma_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub numerical_rank: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub tolerance: f64,
}

pub fn rank_report<T: Scalar>(
    name: &str,
    a: &Matrix<T>,
    rel_eps: f64,
) -> Result<RankReport> {
    if !(rel_eps > 0.0 && rel_eps < 1.0) {
        return Err(Error::invalid(
            "numerical_rank",
            format!("rel_eps {rel_eps} must lie in (0, 1)"),
        ));
    }
    let sv = svd(a, false)?.singular_values;
    let sigma_max = sv.first().map_or(0.0, |s| s.to_f64_lossy());
    let sigma_min = sv.last().map_or(0.0, |s| s.to_f64_lossy());
    let tolerance = rel_eps * sigma_max;
    let numerical_rank = sv
        .iter()
        .filter(|s| s.to_f64_lossy() > tolerance)
        .count();
    Ok(RankReport {
        name: name.to_string(),
        rows: a.rows(),
        cols: a.cols(),
        numerical_rank,
        sigma_max,
        sigma_min,
        tolerance,
    })
}

pub fn numerical_rank<T: Scalar>(a: &Matrix<T>, rel_eps: f64) -> Result<usize> {
    Ok(rank_report("", a, rel_eps)?.numerical_rank)
}
