//! Minimal dense linear algebra for the kernel estimators.
//!
//! Everything here is `f64`: dependence estimates at mini-batch scale lose
//! precision in 32-bit, so activations are upcast before they reach this
//! module. Matrices stay dense; the largest ones we handle are Gram matrices
//! of a few thousand rows.

use crate::error::{Error, Result};

/// Dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data. The data length must match
    /// `rows * cols` and every entry must be finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite entry at flat index {bad}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Largest absolute deviation from symmetry.
    pub fn symmetry_deviation(&self) -> f64 {
        let mut dev = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                dev = dev.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        dev
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Plain dense product, `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Compensated (Kahan) summation; keeps long reductions independent of
/// accumulation order to well below 1e-10.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Double-centers a Gram matrix: returns `H K H` with `H = I - (1/m) 11^T`.
///
/// Every row and column of the result sums to zero. Centering a constant
/// matrix annihilates it, and the operation is idempotent.
pub fn center_gram(k: &Matrix) -> Result<Matrix> {
    if !k.is_square() {
        return Err(Error::Dimension(format!(
            "center_gram needs a square matrix, got {}x{}",
            k.rows(),
            k.cols()
        )));
    }
    let dev = k.symmetry_deviation();
    if dev > 1e-9 {
        return Err(Error::Precondition(format!(
            "center_gram input is not symmetric (max deviation {dev:.3e})"
        )));
    }
    let m = k.rows();
    let mf = m as f64;
    // H K H expands entrywise to K_ij - rowmean_i - colmean_j + grandmean.
    let mut row_mean = vec![0.0f64; m];
    for i in 0..m {
        let mut s = KahanSum::new();
        for &v in k.row(i) {
            s.add(v);
        }
        row_mean[i] = s.value() / mf;
    }
    let mut grand = KahanSum::new();
    for &r in &row_mean {
        grand.add(r);
    }
    let grand = grand.value() / mf;

    let mut out = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let v = k.get(i, j) - row_mean[i] - row_mean[j] + grand;
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Solves `(A + ridge * m * I) X = B` by LU with partial pivoting.
///
/// The shifted system is what the normalized dependence estimator needs;
/// `A` is a product of a Gram matrix and the centering matrix, which is not
/// symmetric, so a general solver is required rather than Cholesky.
pub fn solve_regularized(a: &Matrix, b: &Matrix, ridge: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "solve_regularized needs square A, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() != b.rows() {
        return Err(Error::Dimension(format!(
            "A is {}x{} but B has {} rows",
            a.rows(),
            a.cols(),
            b.rows()
        )));
    }
    if !(ridge > 0.0) {
        return Err(Error::Parameter(format!("ridge must be positive, got {ridge}")));
    }
    let m = a.rows();
    let shift = ridge * m as f64;
    let mut lu = a.clone();
    for i in 0..m {
        let d = lu.get(i, i) + shift;
        lu.set(i, i, d);
    }
    if lu.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entries in solve input".into()));
    }

    // In-place LU factorization with row pivoting.
    let n = m;
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut pivot = col;
        let mut best = lu.get(col, col).abs();
        for r in (col + 1)..n {
            let v = lu.get(r, col).abs();
            if v > best {
                best = v;
                pivot = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::Numeric(format!(
                "singular system: zero pivot at column {col} (ridge {ridge}, size {n})"
            )));
        }
        if pivot != col {
            for j in 0..n {
                let tmp = lu.get(col, j);
                lu.set(col, j, lu.get(pivot, j));
                lu.set(pivot, j, tmp);
            }
            perm.swap(col, pivot);
        }
        let diag = lu.get(col, col);
        for r in (col + 1)..n {
            let factor = lu.get(r, col) / diag;
            lu.set(r, col, factor);
            if factor != 0.0 {
                for j in (col + 1)..n {
                    let v = lu.get(r, j) - factor * lu.get(col, j);
                    lu.set(r, j, v);
                }
            }
        }
    }

    // Forward/back substitution for every column of B.
    let ncols = b.cols();
    let mut x = Matrix::zeros(n, ncols);
    let mut col = vec![0.0f64; n];
    for c in 0..ncols {
        for i in 0..n {
            col[i] = b.get(perm[i], c);
        }
        for i in 1..n {
            let mut s = col[i];
            for j in 0..i {
                s -= lu.get(i, j) * col[j];
            }
            col[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for j in (i + 1)..n {
                s -= lu.get(i, j) * col[j];
            }
            col[i] = s / lu.get(i, i);
        }
        for i in 0..n {
            x.set(i, c, col[i]);
        }
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "solve produced non-finite values; system is ill-conditioned".into(),
        ));
    }
    Ok(x)
}

/// `Tr(A B)` without materializing the product: sum of `A_ij * B_ji`.
pub fn trace_product(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.cols() != b.rows() || a.rows() != b.cols() {
        return Err(Error::Dimension(format!(
            "trace_product needs {}x{} against {}x{}, inner dims must agree",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut acc = KahanSum::new();
    for i in 0..a.rows() {
        let arow = a.row(i);
        for (j, &av) in arow.iter().enumerate() {
            acc.add(av * b.get(j, i));
        }
    }
    Ok(acc.value())
}
