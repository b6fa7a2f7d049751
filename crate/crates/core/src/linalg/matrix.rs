//! Dense row-major matrix type.
//!
//! The single carrier for weights, gradients, supports, and transforms.
//! Storage is `data[i * cols + j] = A[i, j]`, 64-bit floats only. All
//! reference kernels use plain loops with a fixed summation order so that
//! identical inputs produce bit-identical outputs on every run.

use crate::error::{Error, Result};

/// Dense real matrix, row-major, finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Creates a matrix from row-major data, rejecting length mismatches
    /// and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidData {
                expected: rows * cols,
                got: data.len(),
            });
        }
        for (k, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: if cols == 0 { 0 } else { k / cols },
                    col: if cols == 0 { 0 } else { k % cols },
                });
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Internal constructor for freshly computed data; skips the finite
    /// scan. Callers are responsible for input finiteness.
    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from row slices.
    ///
    /// # Panics
    /// Panics on empty or ragged input; intended for literals in tests
    /// and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty(), "must have at least one row");
        let ncols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), ncols, "row {i} has inconsistent length");
            data.extend_from_slice(row);
        }
        Matrix {
            rows: rows.len(),
            cols: ncols,
            data,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Diagonal matrix from the given values.
    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Matrix with i.i.d. standard normal entries drawn from `rng`.
    pub fn gaussian(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.standard_normal()).collect();
        Matrix { rows, cols, data }
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copies a contiguous row range into a new matrix.
    pub fn row_block(&self, start: usize, count: usize) -> Matrix {
        assert!(start + count <= self.rows);
        Matrix {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        }
    }

    /// New matrix consisting of the selected columns, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            for (jj, &j) in idx.iter().enumerate() {
                out.data[i * idx.len() + jj] = self.get(i, j);
            }
        }
        out
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

    /// Matrix product with deterministic (ascending-k) accumulation order.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let (m, k_dim, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for k in 0..k_dim {
                let aik = self.data[i * k_dim + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum::<f64>().sqrt()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    /// Frobenius inner product `<A, B> = tr(A^T B)`.
    pub fn frobenius_dot(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op: "frobenius_dot",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn trace(&self) -> f64 {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self.get(i, i)).sum()
    }

    /// `max |A_ij - B_ij|`; shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// True if any entry is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    /// Deviation from identity of `self * self^T`, as a Frobenius norm.
    /// Zero for matrices with orthonormal rows.
    pub fn row_gram_deviation(&self) -> f64 {
        let gram = self.matmul(&self.transpose()).expect("square product");
        let mut dev = 0.0;
        for i in 0..self.rows {
            for j in 0..self.rows {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = gram.get(i, j) - target;
                dev += d * d;
            }
        }
        dev.sqrt()
    }
}
