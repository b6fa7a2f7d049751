//! Dense linear solve via LU with partial pivoting.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

impl Matrix {
    /// Solves `self * x = b` for square `self`, multiple right-hand-side
    /// columns allowed.
    ///
    /// # Errors
    /// Singular when any pivot magnitude drops below `1e-12 * max|a_ij|`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let (n, nc) = self.shape();
        if n != nc {
            return Err(Error::NotSquare { rows: n, cols: nc });
        }
        if b.rows() != n {
            return Err(Error::DimensionMismatch {
                op: "solve",
                lhs: self.shape(),
                rhs: b.shape(),
            });
        }
        let threshold = 1e-12 * self.max_abs();
        let m = b.cols();
        let mut lu = self.clone();
        let mut x = b.clone();
        for col in 0..n {
            // Partial pivoting: largest magnitude in the column, lowest
            // row index on ties.
            let mut piv = col;
            for r in col + 1..n {
                if lu.get(r, col).abs() > lu.get(piv, col).abs() {
                    piv = r;
                }
            }
            let pval = lu.get(piv, col);
            if pval.abs() <= threshold {
                return Err(Error::Singular {
                    pivot: pval.abs(),
                    threshold,
                });
            }
            if piv != col {
                for j in 0..n {
                    let t = lu.get(col, j);
                    lu.set(col, j, lu.get(piv, j));
                    lu.set(piv, j, t);
                }
                for j in 0..m {
                    let t = x.get(col, j);
                    x.set(col, j, x.get(piv, j));
                    x.set(piv, j, t);
                }
            }
            for r in col + 1..n {
                let factor = lu.get(r, col) / pval;
                if factor == 0.0 {
                    continue;
                }
                for j in col..n {
                    let v = lu.get(r, j) - factor * lu.get(col, j);
                    lu.set(r, j, v);
                }
                for j in 0..m {
                    let v = x.get(r, j) - factor * x.get(col, j);
                    x.set(r, j, v);
                }
            }
        }
        // Back substitution.
        for col in (0..n).rev() {
            let d = lu.get(col, col);
            for j in 0..m {
                let mut acc = x.get(col, j);
                for k in col + 1..n {
                    acc -= lu.get(col, k) * x.get(k, j);
                }
                x.set(col, j, acc / d);
            }
        }
        Ok(x)
    }
}

impl Matrix {
    /// Determinant via LU with partial pivoting. Square input only.
    pub fn determinant(&self) -> Result<f64> {
        let (n, nc) = self.shape();
        if n != nc {
            return Err(Error::NotSquare { rows: n, cols: nc });
        }
        let mut lu = self.clone();
        let mut det = 1.0;
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if lu.get(r, col).abs() > lu.get(piv, col).abs() {
                    piv = r;
                }
            }
            let pval = lu.get(piv, col);
            if pval == 0.0 {
                return Ok(0.0);
            }
            if piv != col {
                det = -det;
                for j in 0..n {
                    let t = lu.get(col, j);
                    lu.set(col, j, lu.get(piv, j));
                    lu.set(piv, j, t);
                }
            }
            det *= pval;
            for r in col + 1..n {
                let factor = lu.get(r, col) / pval;
                if factor == 0.0 {
                    continue;
                }
                for j in col..n {
                    let v = lu.get(r, j) - factor * lu.get(col, j);
                    lu.set(r, j, v);
                }
            }
        }
        Ok(det)
    }
}
