//! In-subspace transforms and the Cayley parameterization.
//!
//! The trainable orthogonal transform is `Q(E) = (I - E/2)^{-1} (I + E/2)`
//! for skew-symmetric `E`, normalized so that `dQ(tE)/dt at t=0` equals
//! `E` exactly. The common `(I-E)^{-1}(I+E)` form has derivative `2E` and
//! would silently rescale every gradient formula downstream, so it is not
//! used. Skew parameters store only the strictly-lower triangle, which
//! makes the skew-symmetry invariant unviolable by construction.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Skew-symmetric parameter `E` of an in-subspace rotation.
///
/// Only the strictly-lower triangle is stored; `E_ij = -E_ji` and a zero
/// diagonal are materialized on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewParam {
    dim: usize,
    /// Strictly-lower entries in row-major order: (1,0), (2,0), (2,1), ...
    lower: Vec<f64>,
}

impl SkewParam {
    /// Zero parameter; `cayley` of it is the identity.
    pub fn zeros(dim: usize) -> Self {
        SkewParam {
            dim,
            lower: vec![0.0; dim * (dim - 1) / 2],
        }
    }

    /// Builds from strictly-lower entries in row-major order.
    pub fn from_lower(dim: usize, lower: Vec<f64>) -> Result<Self> {
        let expected = dim * (dim - 1) / 2;
        if lower.len() != expected {
            return Err(Error::InvalidData {
                expected,
                got: lower.len(),
            });
        }
        if let Some(k) = lower.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: k, col: 0 });
        }
        Ok(SkewParam { dim, lower })
    }

    /// Extracts the skew parameter from a full matrix, verifying that the
    /// input is skew-symmetric to near machine precision.
    pub fn from_matrix(e: &Matrix) -> Result<Self> {
        let (n, m) = e.shape();
        if n != m {
            return Err(Error::NotSquare { rows: n, cols: m });
        }
        let dev = e.add(&e.transpose()).expect("same shape").frobenius_norm();
        let scale = e.frobenius_norm().max(1.0);
        if dev > 1e-12 * scale {
            return Err(Error::Contract {
                op: "SkewParam::from_matrix",
                detail: format!("input not skew-symmetric: ||E + E^T||_F = {dev:.3e}"),
            });
        }
        let mut lower = Vec::with_capacity(n * (n - 1) / 2);
        for i in 1..n {
            for j in 0..i {
                lower.push(e.get(i, j));
            }
        }
        Ok(SkewParam { dim: n, lower })
    }

    /// Random parameter with i.i.d. normal lower-triangle entries scaled
    /// by `scale`.
    pub fn random(dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let lower = (0..dim * (dim - 1) / 2)
            .map(|_| scale * rng.standard_normal())
            .collect();
        SkewParam { dim, lower }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn lower_mut(&mut self) -> &mut [f64] {
        &mut self.lower
    }

    /// Materializes the full skew-symmetric matrix.
    pub fn to_matrix(&self) -> Matrix {
        let n = self.dim;
        let mut m = Matrix::zeros(n, n);
        let mut k = 0;
        for i in 1..n {
            for j in 0..i {
                m.set(i, j, self.lower[k]);
                m.set(j, i, -self.lower[k]);
                k += 1;
            }
        }
        m
    }

    /// In-place update `E <- E - step * direction` where `direction` is a
    /// full skew matrix; only the lower triangle is consumed.
    pub fn step_in_place(&mut self, direction: &Matrix, step: f64) {
        debug_assert_eq!(direction.shape(), (self.dim, self.dim));
        let mut k = 0;
        for i in 1..self.dim {
            for j in 0..i {
                self.lower[k] -= step * direction.get(i, j);
                k += 1;
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        // Each lower entry appears twice in the full matrix.
        (2.0 * self.lower.iter().map(|&v| v * v).sum::<f64>()).sqrt()
    }
}

/// How the selected subspace is transformed.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformSpec {
    /// Rotation `Q(E)` via the Cayley map; trainable through `E`.
    Orthogonal(SkewParam),
    /// Unconstrained dense map, identity-initialized; no geometric
    /// constraint of any kind.
    Free(Matrix),
    /// Constant matrix, immutable after construction (e.g. the scalar -1
    /// block of a Householder reflection).
    Fixed(Matrix),
}

impl TransformSpec {
    /// Orthogonal transform initialized at the identity (`E = 0`).
    pub fn orthogonal_identity(dim: usize) -> Self {
        TransformSpec::Orthogonal(SkewParam::zeros(dim))
    }

    /// Free transform initialized at the identity.
    pub fn free_identity(dim: usize) -> Self {
        TransformSpec::Free(Matrix::identity(dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            TransformSpec::Orthogonal(e) => e.dim(),
            TransformSpec::Free(t) | TransformSpec::Fixed(t) => t.rows(),
        }
    }

    /// Name of the transform class, as used in serialized envelopes.
    pub fn kind(&self) -> &'static str {
        match self {
            TransformSpec::Orthogonal(_) => "orthogonal",
            TransformSpec::Free(_) => "free",
            TransformSpec::Fixed(_) => "fixed",
        }
    }

    /// Materializes the transform as a dense `r x r` matrix.
    pub fn materialize(&self) -> Result<Matrix> {
        match self {
            TransformSpec::Orthogonal(e) => cayley(e),
            TransformSpec::Free(t) | TransformSpec::Fixed(t) => Ok(t.clone()),
        }
    }

    /// True when the materialized transform is orthogonal by construction
    /// or by inspection (fixed matrices are checked numerically).
    pub fn is_orthogonal(&self) -> bool {
        match self {
            TransformSpec::Orthogonal(_) => true,
            TransformSpec::Free(_) => false,
            TransformSpec::Fixed(t) => {
                let gram = t.transpose().matmul(t).expect("square");
                gram.max_abs_diff(&Matrix::identity(t.rows())) <= 1e-10
            }
        }
    }
}

/// Cayley transform `Q(E) = (I - E/2)^{-1} (I + E/2)`.
///
/// Maps skew-symmetric matrices into the rotation group with `Q(0) = I`
/// and `dQ(tE)/dt at t=0 = E`.
pub fn cayley(e: &SkewParam) -> Result<Matrix> {
    let n = e.dim();
    let em = e.to_matrix();
    let i = Matrix::identity(n);
    let a = i.sub(&em.scale(0.5)).expect("same shape");
    let b = i.add(&em.scale(0.5)).expect("same shape");
    // (I - E/2) is nonsingular for every skew E; the solve guards against
    // numerical breakdown anyway.
    a.solve(&b)
}

/// First-order contract check: returns `||(Q(tE) - I)/t - E||_F`, which
/// decays like `t/2 * ||E^2||_F` for small `t`.
pub fn cayley_derivative_check(e: &SkewParam, t_step: f64) -> Result<f64> {
    if !(t_step > 0.0 && t_step <= 0.1) {
        return Err(Error::config(format!(
            "t_step must be in (0, 0.1], got {t_step}"
        )));
    }
    let n = e.dim();
    let scaled = SkewParam::from_lower(n, e.lower().iter().map(|&v| v * t_step).collect())?;
    let q = cayley(&scaled)?;
    let diff = q
        .sub(&Matrix::identity(n))
        .expect("same shape")
        .scale(1.0 / t_step)
        .sub(&e.to_matrix())
        .expect("same shape");
    Ok(diff.frobenius_norm())
}

/// Pulls a loss gradient with respect to `Q = cayley(E)` back to a
/// skew-symmetric gradient with respect to `E`:
///
/// `dL/dE = skew( (1/2) (I + Q)^T grad_q (I - E/2)^{-T} )`.
///
/// The result is the Frobenius-metric gradient on the skew subspace, so a
/// gradient step `E <- E - eta * dL/dE` decreases the loss at first order
/// by `eta * ||dL/dE||_F^2`.
pub fn cayley_adjoint(e: &SkewParam, grad_q: &Matrix) -> Result<Matrix> {
    let n = e.dim();
    if grad_q.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            op: "cayley_adjoint",
            lhs: (n, n),
            rhs: grad_q.shape(),
        });
    }
    let q = cayley(e)?;
    let i = Matrix::identity(n);
    let a = i.sub(&e.to_matrix().scale(0.5)).expect("same shape");
    // X = grad_q * A^{-T}  solved as  A X^T = grad_q^T.
    let x = a.solve(&grad_q.transpose())?.transpose();
    let m = i
        .add(&q)
        .expect("same shape")
        .transpose()
        .matmul(&x)?
        .scale(0.5);
    // Project onto skew-symmetric matrices.
    Ok(m.sub(&m.transpose()).expect("same shape").scale(0.5))
}
