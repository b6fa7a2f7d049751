//! Right-multiplicative subspace-rotation adapters.
//!
//! The update is `W+ = W0 * prod_l S_l` with
//! `S_l = I + P_l^T (T_l - I) P_l` for a row-orthonormal support `P_l` and
//! an in-subspace transform `T_l`. When every `T_l` is orthogonal the full
//! transform is orthogonal, so `W+ W+^T = W0 W0^T` and all singular values
//! of `W0` are preserved; regardless of the transform class the induced
//! additive delta `W+ - W0` has rank at most `sum_l r_l`.
//!
//! Factors apply left-to-right in stored order. Disjoint supports commute;
//! overlapping ones do not, so the order is part of the adapter state.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::transform::{SkewParam, TransformSpec};

/// How a support basis was constructed. Carried for reporting only; it
/// never changes numerical behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Principal,
    GradSvd,
    SkewGrad,
    Random,
    Coordinate,
    Butterfly,
    Explicit,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Principal => "principal",
            Provenance::GradSvd => "gradsvd",
            Provenance::SkewGrad => "skewgrad",
            Provenance::Random => "random",
            Provenance::Coordinate => "coordinate",
            Provenance::Butterfly => "butterfly",
            Provenance::Explicit => "explicit",
        };
        f.write_str(s)
    }
}

/// Row-orthonormal support basis `P` (r x d) selecting the input subspace
/// on which an adapter factor acts.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportBasis {
    p: Matrix,
    provenance: Provenance,
}

impl SupportBasis {
    /// Validates row-orthonormality (`||P P^T - I||_F <= 1e-10`) and
    /// `r <= d` before accepting the basis.
    pub fn new(p: Matrix, provenance: Provenance) -> Result<Self> {
        let (r, d) = p.shape();
        if r == 0 {
            return Err(Error::config("support width r must be at least 1"));
        }
        if r > d {
            return Err(Error::Contract {
                op: "SupportBasis::new",
                detail: format!("r = {r} exceeds d = {d}"),
            });
        }
        let dev = p.row_gram_deviation();
        if dev > 1e-10 {
            return Err(Error::Contract {
                op: "SupportBasis::new",
                detail: format!("rows not orthonormal: ||PP^T - I||_F = {dev:.3e}"),
            });
        }
        Ok(SupportBasis { p, provenance })
    }

    /// Bypasses validation. Exists only so the check suites can inject a
    /// deliberately corrupted support as a negative control.
    pub(crate) fn new_unchecked(p: Matrix, provenance: Provenance) -> Self {
        SupportBasis { p, provenance }
    }

    pub fn r(&self) -> usize {
        self.p.rows()
    }

    pub fn d(&self) -> usize {
        self.p.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Standard-basis support selecting the given coordinates.
    pub fn coordinate(d: usize, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::config("coordinate support needs at least one index"));
        }
        let mut seen = vec![false; d];
        let mut p = Matrix::zeros(indices.len(), d);
        for (row, &idx) in indices.iter().enumerate() {
            if idx >= d {
                return Err(Error::config(format!(
                    "coordinate index {idx} out of range for d = {d}"
                )));
            }
            if seen[idx] {
                return Err(Error::config(format!("duplicate coordinate index {idx}")));
            }
            seen[idx] = true;
            p.set(row, idx, 1.0);
        }
        SupportBasis::new(p, Provenance::Coordinate)
    }
}

/// One adapter factor: a support plus the transform acting inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoftFactor {
    pub support: SupportBasis,
    pub transform: TransformSpec,
}

impl LoftFactor {
    pub fn new(support: SupportBasis, transform: TransformSpec) -> Result<Self> {
        if support.r() != transform.dim() {
            return Err(Error::DimensionMismatch {
                op: "LoftFactor::new",
                lhs: (support.r(), support.d()),
                rhs: (transform.dim(), transform.dim()),
            });
        }
        Ok(LoftFactor { support, transform })
    }

    /// Materializes the full `d x d` factor `S = I + P^T (T - I) P`.
    pub fn build_s(&self) -> Result<Matrix> {
        let p = self.support.matrix();
        let d = self.support.d();
        let t = self.transform.materialize()?;
        let t_minus_i = t.sub(&Matrix::identity(self.support.r()))?;
        let inner = t_minus_i.matmul(p)?; // (T - I) P, r x d
        let bump = p.transpose().matmul(&inner)?; // P^T (T - I) P, d x d
        Matrix::identity(d).add(&bump)
    }

    /// Applies the factor to columns of `x` without materializing the
    /// `d x d` matrix: `x + P^T ((T - I) (P x))`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let p = self.support.matrix();
        if x.rows() != self.support.d() {
            return Err(Error::DimensionMismatch {
                op: "LoftFactor::apply",
                lhs: (self.support.d(), self.support.d()),
                rhs: x.shape(),
            });
        }
        let t = self.transform.materialize()?;
        let px = p.matmul(x)?;
        let inner = t.matmul(&px)?.sub(&px)?; // (T - I)(P x)
        x.add(&p.transpose().matmul(&inner)?)
    }
}

/// A frozen base weight together with an ordered list of factors.
#[derive(Debug, Clone)]
pub struct LoftAdapter {
    base_weight: Matrix,
    pub factors: Vec<LoftFactor>,
}

/// Above this input width, merging composes factors implicitly instead of
/// materializing `d x d` factor matrices.
const IMPLICIT_MERGE_DIM: usize = 64;

impl LoftAdapter {
    pub fn new(base_weight: Matrix, factors: Vec<LoftFactor>) -> Result<Self> {
        let d_in = base_weight.cols();
        for (i, f) in factors.iter().enumerate() {
            if f.support.d() != d_in {
                return Err(Error::DimensionMismatch {
                    op: "LoftAdapter::new",
                    lhs: (base_weight.rows(), d_in),
                    rhs: (f.support.r(), f.support.d()),
                });
            }
            let _ = i;
        }
        Ok(LoftAdapter {
            base_weight,
            factors,
        })
    }

    /// The frozen weight. Training never mutates it.
    pub fn base_weight(&self) -> &Matrix {
        &self.base_weight
    }

    pub fn d_in(&self) -> usize {
        self.base_weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.base_weight.rows()
    }

    /// Applies the adapted map to inputs (columns of `x`) using the
    /// r-width implicit form per factor; no `d x d` matrix is formed.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.d_in() {
            return Err(Error::DimensionMismatch {
                op: "LoftAdapter::apply",
                lhs: (self.d_in(), self.d_in()),
                rhs: x.shape(),
            });
        }
        // W0 * (S_1 ... S_L) * x applies the last factor to x first.
        let mut cur = x.clone();
        for f in self.factors.iter().rev() {
            cur = f.apply(&cur)?;
        }
        self.base_weight.matmul(&cur)
    }

    /// Merged weight `W+ = W0 * prod_l S_l`, factors in stored order.
    pub fn merge(&self) -> Result<Matrix> {
        let mut w = self.base_weight.clone();
        for f in &self.factors {
            if self.d_in() > IMPLICIT_MERGE_DIM {
                // W S = W + (W P^T)(T - I) P without forming S.
                let p = f.support.matrix();
                let t = f.transform.materialize()?;
                let wpt = w.matmul(&p.transpose())?;
                let t_minus_i = t.sub(&Matrix::identity(f.support.r()))?;
                let bump = wpt.matmul(&t_minus_i)?.matmul(p)?;
                w = w.add(&bump)?;
            } else {
                w = w.matmul(&f.build_s()?)?;
            }
        }
        Ok(w)
    }

    /// Induced additive update `delta = merge() - W0`. Its rank is at most
    /// the sum of factor widths.
    pub fn delta(&self) -> Result<Matrix> {
        self.merge()?.sub(&self.base_weight)
    }
}

/// Row Gram matrix `W W^T`; preserved exactly by orthogonal adapters.
pub fn row_gram(w: &Matrix) -> Matrix {
    w.matmul(&w.transpose()).expect("shape by construction")
}

// ---------------------------------------------------------------------
// Serialization: a JSON envelope describing shapes and kinds, with the
// numeric payloads in sibling CSV files.
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FactorEnvelope {
    provenance: Provenance,
    kind: String,
    r: usize,
    p_file: String,
    param_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdapterEnvelope {
    d_in: usize,
    d_out: usize,
    w0_file: String,
    factors: Vec<FactorEnvelope>,
}

impl LoftAdapter {
    /// Saves the adapter into `dir` as `adapter.json` plus sibling CSV
    /// files (`w0.csv`, `factor_<i>_p.csv`, `factor_<i>_t.csv`). Returns
    /// the list of files written, relative to `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut files = Vec::new();
        let w0_file = "w0.csv".to_string();
        self.base_weight.write_csv(&dir.join(&w0_file))?;
        files.push(w0_file.clone());
        let mut factors = Vec::new();
        for (i, f) in self.factors.iter().enumerate() {
            let p_file = format!("factor_{i}_p.csv");
            f.support.matrix().write_csv(&dir.join(&p_file))?;
            files.push(p_file.clone());
            let param_file = format!("factor_{i}_t.csv");
            let payload = match &f.transform {
                TransformSpec::Orthogonal(e) => e.to_matrix(),
                TransformSpec::Free(t) | TransformSpec::Fixed(t) => t.clone(),
            };
            payload.write_csv(&dir.join(&param_file))?;
            files.push(param_file.clone());
            factors.push(FactorEnvelope {
                provenance: f.support.provenance(),
                kind: f.transform.kind().to_string(),
                r: f.support.r(),
                p_file,
                param_file,
            });
        }
        let envelope = AdapterEnvelope {
            d_in: self.d_in(),
            d_out: self.d_out(),
            w0_file,
            factors,
        };
        let json = serde_json::to_string_pretty(&envelope).expect("static schema");
        let env_path = dir.join("adapter.json");
        std::fs::write(&env_path, json).map_err(|source| Error::Io {
            path: env_path.clone(),
            source,
        })?;
        files.push("adapter.json".to_string());
        Ok(files)
    }

    /// Loads an adapter previously written by [`LoftAdapter::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let env_path = dir.join("adapter.json");
        let text = std::fs::read_to_string(&env_path).map_err(|source| Error::Io {
            path: env_path.clone(),
            source,
        })?;
        let envelope: AdapterEnvelope = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: env_path.clone(),
            line: e.line(),
            detail: e.to_string(),
        })?;
        let w0 = Matrix::read_csv(&dir.join(&envelope.w0_file))?;
        if w0.shape() != (envelope.d_out, envelope.d_in) {
            return Err(Error::Parse {
                path: env_path,
                line: 0,
                detail: format!(
                    "w0 shape {:?} disagrees with envelope ({}, {})",
                    w0.shape(),
                    envelope.d_out,
                    envelope.d_in
                ),
            });
        }
        let mut factors = Vec::new();
        for fe in &envelope.factors {
            let p = Matrix::read_csv(&dir.join(&fe.p_file))?;
            let support = SupportBasis::new(p, fe.provenance)?;
            let payload = Matrix::read_csv(&dir.join(&fe.param_file))?;
            let transform = match fe.kind.as_str() {
                "orthogonal" => TransformSpec::Orthogonal(SkewParam::from_matrix(&payload)?),
                "free" => TransformSpec::Free(payload),
                "fixed" => TransformSpec::Fixed(payload),
                other => {
                    return Err(Error::Parse {
                        path: env_path,
                        line: 0,
                        detail: format!("unknown transform kind '{other}'"),
                    })
                }
            };
            factors.push(LoftFactor::new(support, transform)?);
        }
        LoftAdapter::new(w0, factors)
    }
}
