use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix. Values are immutable once built; every operation
/// returns a fresh matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(
                "from_vec",
                format!("data length {} != {}x{}", data.len(), rows, cols),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("from_rows", "ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Matrix::from_vec(r, c, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::one(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, r: usize, c: usize, v: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != rhs.rows {
            return Err(Error::shape("matmul", self.shape(), rhs.shape()));
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = Matrix::zeros(m, n);
        // Blocked i-k-j order: output tiles of ROW_BLOCK x COL_BLOCK stay
        // L1-resident while rhs rows stream through them. Every output
        // element still accumulates over k in strictly increasing order,
        // which the KV-buffer reduction contract relies on; blocking does
        // not change a single rounding.
        const ROW_BLOCK: usize = 8;
        const COL_BLOCK: usize = 512;
        for ib in (0..m).step_by(ROW_BLOCK) {
            let ie = (ib + ROW_BLOCK).min(m);
            for jb in (0..n).step_by(COL_BLOCK) {
                let je = (jb + COL_BLOCK).min(n);
                for p in 0..k {
                    let rhs_row = &rhs.data[p * n + jb..p * n + je];
                    for i in ib..ie {
                        let a = self.data[i * k + p];
                        let out_row = &mut out.data[i * n + jb..i * n + je];
                        for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                            *o = *o + a * b;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip("add", rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip("sub", rhs, |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip("hadamard", rhs, |a, b| a * b)
    }

    fn zip(
        &self,
        op: &'static str,
        rhs: &Matrix<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Matrix<T>> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(op, self.shape(), rhs.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: T) -> Matrix<T> {
        self.map(|x| x * s)
    }

    /// Row-wise softmax with per-row max subtraction, so entries up to
    /// +-1e3 (and far beyond) stay finite.
    pub fn softmax_rows(&self) -> Matrix<T> {
        self.clone().softmax_rows_owned()
    }

    /// In-place softmax for owned values; avoids reallocating quadratic
    /// intermediates on the hot attention path. Identical rounding to
    /// `softmax_rows`.
    pub(crate) fn softmax_rows_owned(mut self) -> Matrix<T> {
        for r in 0..self.rows {
            let row = self.row_mut(r);
            let mut max = T::neg_infinity();
            for &x in row.iter() {
                if x > max {
                    max = x;
                }
            }
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum = sum + *x;
            }
            for x in row.iter_mut() {
                *x = *x / sum;
            }
        }
        self
    }

    /// Elu(x) + 1: x + 1 for x > 0, exp(x) otherwise. Strictly positive.
    pub fn kernel_elu1(&self) -> Matrix<T> {
        self.map(|x| if x > T::zero() { x + T::one() } else { x.exp() })
    }

    pub fn relu(&self) -> Matrix<T> {
        self.map(|x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn tanh_map(&self) -> Matrix<T> {
        self.map(|x| x.tanh())
    }

    /// Arithmetic mean over rows, producing a 1 x cols matrix.
    pub fn mean_rows(&self) -> Matrix<T> {
        let n = T::from_config(self.rows as f64);
        let mut acc = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            for (a, &x) in acc.iter_mut().zip(self.row(r)) {
                *a = *a + x;
            }
        }
        Matrix {
            rows: 1,
            cols: self.cols,
            data: acc.into_iter().map(|x| x / n).collect(),
        }
    }

    /// Multiply row i by s[i]; `s` must be rows x 1.
    pub fn scale_rows(&self, s: &Matrix<T>) -> Result<Matrix<T>> {
        if s.rows != self.rows || s.cols != 1 {
            return Err(Error::shape("scale_rows", self.shape(), s.shape()));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let f = s.data[r];
            for x in out.row_mut(r) {
                *x = *x * f;
            }
        }
        Ok(out)
    }

    /// Divide row i by d[i]; `d` must be rows x 1 and nonzero.
    pub fn div_rows(&self, d: &Matrix<T>) -> Result<Matrix<T>> {
        if d.rows != self.rows || d.cols != 1 {
            return Err(Error::shape("div_rows", self.shape(), d.shape()));
        }
        if d.data.iter().any(|&x| x == T::zero()) {
            return Err(Error::numerical("div_rows", "zero denominator"));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let f = d.data[r];
            for x in out.row_mut(r) {
                *x = *x / f;
            }
        }
        Ok(out)
    }

    /// Add a 1 x cols bias row to every row.
    pub fn add_bias(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        if b.rows != 1 || b.cols != self.cols {
            return Err(Error::shape("add_bias", self.shape(), b.shape()));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for (x, &v) in out.row_mut(r).iter_mut().zip(&b.data) {
                *x = *x + v;
            }
        }
        Ok(out)
    }

    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Matrix<T>> {
        if start + width > self.cols {
            return Err(Error::invalid(
                "slice_cols",
                format!("[{start}, {}) out of {} cols", start + width, self.cols),
            ));
        }
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + width]);
        }
        Ok(Matrix {
            rows: self.rows,
            cols: width,
            data,
        })
    }

    pub fn concat_cols(parts: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let rows = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols", "no parts"))?
            .rows;
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::invalid("concat_cols", "row counts differ"));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn frobenius_norm(&self) -> T {
        self.data
            .iter()
            .map(|&x| x * x)
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    pub fn max_abs_diff(&self, rhs: &Matrix<T>) -> T {
        debug_assert_eq!(self.shape(), rhs.shape());
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |m, d| if d > m { d } else { m })
    }

    /// Convert element type (f64 <-> f32 round-trips through f64).
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&x| U::from_config(x.to_f64_lossy()))
                .collect(),
        }
    }
}
