use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

const MAX_SWEEPS: usize = 100;

/// Singular value decomposition A = U diag(sigma) V^T.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    /// Descending, nonnegative.
    pub singular_values: Vec<T>,
    /// rows x min(rows, cols), present when factors were requested.
    pub u: Option<Matrix<T>>,
    /// min(rows, cols) x cols, present when factors were requested.
    pub vt: Option<Matrix<T>>,
}

/// One-sided Jacobi SVD: rotate column pairs of the tall operand until all
/// pairs are numerically orthogonal. Accurate and simple at the d <= 64
/// scales this crate works with.
pub fn svd<T: Scalar>(a: &Matrix<T>, want_factors: bool) -> Result<Svd<T>> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::invalid("svd", "empty matrix"));
    }
    let transposed = a.rows() < a.cols();
    let work = if transposed { a.transpose() } else { a.clone() };
    let (m, n) = work.shape();

    // Columns of `g`, stored column-major for the rotations.
    let mut g: Vec<Vec<T>> = (0..n)
        .map(|j| (0..m).map(|i| work.get(i, j)).collect())
        .collect();
    let mut v = Matrix::<T>::identity(n);

    let tol = T::from_config(1e-12);
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut app, mut aqq, mut apq) = (T::zero(), T::zero(), T::zero());
                for i in 0..m {
                    let (x, y) = (g[p][i], g[q][i]);
                    app = app + x * x;
                    aqq = aqq + y * y;
                    apq = apq + x * y;
                }
                if apq.abs() <= tol * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                // Jacobi rotation zeroing the (p,q) entry of G^T G.
                let two = T::from_config(2.0);
                let theta = (aqq - app) / (two * apq);
                let t = theta.signum() / (theta.abs() + (T::one() + theta * theta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (g[p][i], g[q][i]);
                    g[p][i] = c * x - s * y;
                    g[q][i] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v.get(i, p), v.get(i, q));
                    v.set(i, p, c * x - s * y);
                    v.set(i, q, s * x + c * y);
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numerical(
            "svd",
            format!("one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps"),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<T> = g
        .iter()
        .map(|col| {
            col.iter()
                .map(|&x| x * x)
                .fold(T::zero(), |a, b| a + b)
                .sqrt()
        })
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let singular_values: Vec<T> = order.iter().map(|&j| norms[j]).collect();

    if !want_factors {
        return Ok(Svd {
            singular_values,
            u: None,
            vt: None,
        });
    }

    // Left vectors are the normalized columns of G; zero singular values get
    // zero columns (unused in any reconstruction).
    let mut u = Matrix::<T>::zeros(m, n);
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        if s > T::zero() {
            for i in 0..m {
                u.set(i, k, g[j][i] / s);
            }
        }
    }
    let mut vt = Matrix::<T>::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        for i in 0..n {
            vt.set(k, i, v.get(i, j));
        }
    }

    let (u, vt) = if transposed {
        (vt.transpose(), u.transpose())
    } else {
        (u, vt)
    };
    Ok(Svd {
        singular_values,
        u: Some(u),
        vt: Some(vt),
    })
}
