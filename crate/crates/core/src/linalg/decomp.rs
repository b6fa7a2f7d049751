//! Orthogonal decompositions: row QR, SVD, symmetric eigendecomposition.
//!
//! All kernels are plain-loop Jacobi/Gram-Schmidt variants chosen for
//! determinism rather than speed. Sweep order is fixed, sign conventions
//! are pinned (largest-magnitude entry of each singular/eigen-vector made
//! positive, ties broken by lowest index), and iteration caps convert
//! non-convergence into an explicit error instead of silent garbage.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Convergence threshold for Jacobi rotations, relative to column norms.
const JACOBI_TOL: f64 = 1e-15;

/// Sweep cap multiplier; exceeding `100 * max(dim)` sweeps is an error.
const SWEEP_CAP: usize = 100;

/// Singular value decomposition `A = U diag(sigma) V^T`.
///
/// `u` is `m x k`, `sigma` has length `k = min(m, n)` sorted descending,
/// and `vt` is `k x n` holding right singular vectors as rows.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    /// Rebuilds `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let k = self.sigma.len();
        let mut scaled = self.u.clone();
        for i in 0..scaled.rows() {
            for j in 0..k {
                let v = scaled.get(i, j) * self.sigma[j];
                scaled.set(i, j, v);
            }
        }
        scaled.matmul(&self.vt).expect("shape by construction")
    }

    /// Count of singular values above `threshold_ratio * sigma_max`.
    pub fn numerical_rank(&self, threshold_ratio: f64) -> usize {
        let smax = self.sigma.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.sigma.iter().filter(|&&s| s > threshold_ratio * smax).count()
    }
}

/// Symmetric eigendecomposition `A = V diag(values) V^T`.
#[derive(Debug, Clone)]
pub struct SymEigResult {
    /// Eigenvalues, descending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, ordered to match `values`.
    pub vectors: Matrix,
}

impl Matrix {
    /// Orthonormalizes the rows of `self` (rows <= cols, full row rank)
    /// via twice-iterated Gram-Schmidt. The output `Q` satisfies
    /// `Q Q^T = I` and spans the same row space.
    ///
    /// # Errors
    /// Degenerate input when the smallest elimination pivot falls below
    /// `1e-12` times the largest.
    pub fn qr_orthonormal_rows(&self) -> Result<Matrix> {
        let (r, d) = self.shape();
        if r > d {
            return Err(Error::Contract {
                op: "qr_orthonormal_rows",
                detail: format!("requires rows <= cols, got {r}x{d}"),
            });
        }
        if r == 0 {
            return Err(Error::DegenerateInput {
                op: "qr_orthonormal_rows",
                detail: "empty input".into(),
            });
        }
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(r);
        let mut diag = Vec::with_capacity(r);
        for i in 0..r {
            let mut v = self.row(i).to_vec();
            // Two orthogonalization passes keep Q Q^T = I near machine
            // precision even for nearly dependent rows.
            for _ in 0..2 {
                for qj in &q {
                    let dot: f64 = v.iter().zip(qj).map(|(&a, &b)| a * b).sum();
                    for (vk, &qk) in v.iter_mut().zip(qj) {
                        *vk -= dot * qk;
                    }
                }
            }
            let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
            diag.push(norm);
            if norm == 0.0 {
                return Err(Error::DegenerateInput {
                    op: "qr_orthonormal_rows",
                    detail: format!("row {i} is dependent on preceding rows"),
                });
            }
            for x in &mut v {
                *x /= norm;
            }
            q.push(v);
        }
        let largest = diag.iter().fold(0.0_f64, |m, &x| m.max(x));
        let smallest = diag.iter().fold(f64::INFINITY, |m, &x| m.min(x));
        if smallest < 1e-12 * largest {
            return Err(Error::DegenerateInput {
                op: "qr_orthonormal_rows",
                detail: format!(
                    "rank deficient: smallest pivot {smallest:.3e} vs largest {largest:.3e}"
                ),
            });
        }
        let mut data = Vec::with_capacity(r * d);
        for row in q {
            data.extend_from_slice(&row);
        }
        Ok(Matrix::from_vec_unchecked(r, d, data))
    }

    /// One-sided Jacobi SVD with a deterministic sweep order and sign
    /// convention (largest-magnitude entry of each right singular vector
    /// made positive; ties broken by lowest index).
    pub fn svd(&self) -> Result<SvdResult> {
        let (m, n) = self.shape();
        if m >= n {
            svd_tall(self)
        } else {
            // A = U S V^T  <=>  A^T = V S U^T.
            let t = svd_tall(&self.transpose())?;
            Ok(SvdResult {
                u: t.vt.transpose(),
                sigma: t.sigma,
                vt: t.u.transpose(),
            })
        }
    }

    /// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotation.
    ///
    /// # Errors
    /// Contract error when `||A - A^T||_F > 1e-9 * ||A||_F`; convergence
    /// error past the sweep cap.
    pub fn sym_eig(&self) -> Result<SymEigResult> {
        let (m, n) = self.shape();
        if m != n {
            return Err(Error::NotSquare { rows: m, cols: n });
        }
        let asym = self.sub(&self.transpose()).expect("same shape").frobenius_norm();
        let scale = self.frobenius_norm();
        if asym > 1e-9 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Contract {
                op: "sym_eig",
                detail: format!("asymmetry {asym:.3e} exceeds 1e-9 * ||A||_F = {:.3e}", 1e-9 * scale),
            });
        }
        // Work on the symmetrized copy so the iteration sees an exactly
        // symmetric matrix.
        let mut s = self.add(&self.transpose()).expect("same shape").scale(0.5);
        let mut v = Matrix::identity(n);
        if n <= 1 {
            return Ok(SymEigResult {
                values: (0..n).map(|i| s.get(i, i)).collect(),
                vectors: v,
            });
        }
        let off_tol = JACOBI_TOL * scale.max(f64::MIN_POSITIVE);
        let cap = SWEEP_CAP * n;
        let mut converged = false;
        for _sweep in 0..cap {
            let mut rotated = false;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let spq = s.get(p, q);
                    if spq.abs() <= off_tol {
                        continue;
                    }
                    rotated = true;
                    let tau = (s.get(q, q) - s.get(p, p)) / (2.0 * spq);
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * c;
                    // Update rows/columns p and q of the symmetric matrix.
                    for k in 0..n {
                        let skp = s.get(k, p);
                        let skq = s.get(k, q);
                        s.set(k, p, c * skp - sn * skq);
                        s.set(k, q, sn * skp + c * skq);
                    }
                    for k in 0..n {
                        let spk = s.get(p, k);
                        let sqk = s.get(q, k);
                        s.set(p, k, c * spk - sn * sqk);
                        s.set(q, k, sn * spk + c * sqk);
                    }
                    s.set(p, q, 0.0);
                    s.set(q, p, 0.0);
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - sn * vkq);
                        v.set(k, q, sn * vkp + c * vkq);
                    }
                }
            }
            if !rotated {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                op: "sym_eig",
                sweeps: cap,
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            s.get(b, b)
                .partial_cmp(&s.get(a, a))
                .expect("finite eigenvalues")
                .then(a.cmp(&b))
        });
        let values: Vec<f64> = order.iter().map(|&i| s.get(i, i)).collect();
        let mut vectors = Matrix::zeros(n, n);
        for (new_j, &old_j) in order.iter().enumerate() {
            let mut col: Vec<f64> = (0..n).map(|i| v.get(i, old_j)).collect();
            fix_sign(&mut col);
            for i in 0..n {
                vectors.set(i, new_j, col[i]);
            }
        }
        Ok(SymEigResult { values, vectors })
    }

    /// Completes the row-orthonormal matrix `self` (k x d, k <= d) to a
    /// full orthogonal basis, returning the `(d - k) x d` complement.
    /// Deterministic: at each step the standard basis vector with the
    /// largest residual against the accumulated rows is selected.
    pub fn orthonormal_row_complement(&self) -> Matrix {
        let (k, d) = self.shape();
        assert!(k <= d, "complement requires rows <= cols");
        let mut basis: Vec<Vec<f64>> = (0..k).map(|i| self.row(i).to_vec()).collect();
        let mut out = Vec::with_capacity((d - k) * d);
        for _ in 0..d - k {
            let next = best_residual_direction(&basis, d);
            out.extend_from_slice(&next);
            basis.push(next);
        }
        Matrix::from_vec_unchecked(d - k, d, out)
    }
}

/// One-sided Jacobi on a tall (m >= n) matrix.
fn svd_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    if n == 0 || m == 0 {
        return Ok(SvdResult {
            u: Matrix::zeros(m, 0),
            sigma: vec![],
            vt: Matrix::zeros(0, n),
        });
    }
    // Columns of `b` are rotated toward mutual orthogonality; `v`
    // accumulates the right rotations so that b = a * v throughout.
    let mut b = a.transpose(); // n x m: row i of b is column i of a.
    let mut v = Matrix::identity(n);
    let zero_tol = f64::EPSILON * a.frobenius_norm();
    let cap = SWEEP_CAP * m.max(n);
    let mut converged = false;
    for _sweep in 0..cap {
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = col_moments(&b, p, q);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate_rows(&mut b, p, q, c, sn);
                rotate_columns(&mut v, p, q, c, sn);
            }
        }
        // Flush columns at the noise floor to exactly zero so they cannot
        // stall convergence.
        for p in 0..n {
            let norm_sq: f64 = b.row(p).iter().map(|&x| x * x).sum();
            if norm_sq.sqrt() <= zero_tol {
                for j in 0..m {
                    b.set(p, j, 0.0);
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { op: "svd", sweeps: cap });
    }

    let mut sigma: Vec<f64> = (0..n)
        .map(|p| b.row(p).iter().map(|&x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        sigma[j]
            .partial_cmp(&sigma[i])
            .expect("finite singular values")
            .then(i.cmp(&j))
    });
    sigma = order.iter().map(|&i| sigma[i]).collect();

    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut vt = Matrix::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        let mut right: Vec<f64> = (0..n).map(|i| v.get(i, old_j)).collect();
        let mut left: Option<Vec<f64>> = if sigma[new_j] > 0.0 {
            Some(b.row(old_j).iter().map(|&x| x / sigma[new_j]).collect())
        } else {
            None
        };
        // Deterministic sign: largest-magnitude entry of the right vector
        // positive; the left vector flips with it.
        let flip = needs_flip(&right);
        if flip {
            for x in &mut right {
                *x = -*x;
            }
            if let Some(l) = &mut left {
                for x in l.iter_mut() {
                    *x = -*x;
                }
            }
        }
        for (jj, &x) in right.iter().enumerate() {
            vt.set(new_j, jj, x);
        }
        u_cols.push(left);
    }
    // Fill left vectors for zero singular values with an orthonormal
    // completion so U^T U = I holds even for rank-deficient input.
    let mut have: Vec<Vec<f64>> = u_cols.iter().flatten().cloned().collect();
    for slot in &mut u_cols {
        if slot.is_none() {
            let next = best_residual_direction(&have, m);
            have.push(next.clone());
            *slot = Some(next);
        }
    }
    let mut u = Matrix::zeros(m, n);
    for (j, col) in u_cols.iter().enumerate() {
        let col = col.as_ref().expect("filled above");
        for i in 0..m {
            u.set(i, j, col[i]);
        }
    }
    Ok(SvdResult { u, sigma, vt })
}

/// Column moments of the implicit matrix whose columns are rows of `b`.
fn col_moments(b: &Matrix, p: usize, q: usize) -> (f64, f64, f64) {
    let rp = b.row(p);
    let rq = b.row(q);
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for (&x, &y) in rp.iter().zip(rq) {
        alpha += x * x;
        beta += y * y;
        gamma += x * y;
    }
    (alpha, beta, gamma)
}

fn rotate_rows(b: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = b.cols();
    let (pr, qr) = (p.min(q), p.max(q));
    debug_assert!(pr < qr);
    let data = b.data_mut();
    let (head, tail) = data.split_at_mut(qr * cols);
    let rowp = &mut head[pr * cols..(pr + 1) * cols];
    let rowq = &mut tail[..cols];
    for (x, y) in rowp.iter_mut().zip(rowq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

fn rotate_columns(v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..v.rows() {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// True when the vector's largest-magnitude entry (lowest index on ties)
/// is negative.
fn needs_flip(v: &[f64]) -> bool {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    v[best] < 0.0
}

fn fix_sign(v: &mut [f64]) {
    if needs_flip(v) {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Among standard basis vectors, picks the one with the largest residual
/// after projecting out `basis`, orthonormalizes it (two passes), and
/// returns it. `basis` rows must be orthonormal.
fn best_residual_direction(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cand in 0..dim {
        let mut v = vec![0.0; dim];
        v[cand] = 1.0;
        for _ in 0..2 {
            for row in basis {
                let dot: f64 = v.iter().zip(row).map(|(&a, &b)| a * b).sum();
                for (vk, &rk) in v.iter_mut().zip(row) {
                    *vk -= dot * rk;
                }
            }
        }
        let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
        let better = match &best {
            Some((bn, _)) => norm > *bn + 1e-12,
            None => true,
        };
        if better {
            best = Some((norm, v));
        }
    }
    let (norm, mut v) = best.expect("dim > 0");
    debug_assert!(norm > 0.0, "no independent direction left");
    for x in &mut v {
        *x /= norm;
    }
    v
}
