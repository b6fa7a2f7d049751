//! Support construction and first-order support diagnostics.
//!
//! The local training signal of a right-subspace orthogonal update is
//! governed by the skew-gradient matrix `F = skew(W0^T G)`: at zero
//! initialization the gradient with respect to the in-subspace rotation
//! parameter is exactly `P F P^T`, and its squared Frobenius norm is
//! bounded by `2 * sum_{k <= floor(r/2)} mu_k^2` where `+-i mu_k` are the
//! eigenvalue pairs of `F`. The bound is attained when `P` spans the
//! invariant subspace of `F` for the top pairs; that choice is the
//! SkewGrad support. GradSVD instead takes the top right-singular
//! subspace of `G`, and the principal support takes that of `W0`.
//!
//! The rho score reports captured skew-signal energy relative to the
//! attainable maximum, aggregated over one or more layers.

use serde::{Deserialize, Serialize};

use crate::adapter::{Provenance, SupportBasis};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::transform::SkewParam;

/// Skew-symmetric part `(A - A^T) / 2`.
pub fn skew_part(a: &Matrix) -> Result<Matrix> {
    let (n, m) = a.shape();
    if n != m {
        return Err(Error::NotSquare { rows: n, cols: m });
    }
    Ok(a.sub(&a.transpose()).expect("same shape").scale(0.5))
}

/// The skew-gradient signal of a (weight, gradient) pair: the matrix
/// `F = skew(W0^T G)` together with its eigenvalue pair magnitudes.
#[derive(Debug, Clone)]
pub struct SkewSignal {
    /// `skew(W0^T G)`, d x d and exactly skew-symmetric.
    pub f: Matrix,
    /// Pair magnitudes `mu_1 >= mu_2 >= ... >= 0`, one entry per
    /// eigenvalue pair; length `floor(d/2)`.
    pub mu: Vec<f64>,
}

impl SkewSignal {
    /// `2 * sum_{k <= floor(r/2)} mu_k^2`: the largest squared gradient
    /// norm any width-`r` support can expose.
    pub fn signal_bound(&self, r: usize) -> f64 {
        2.0 * self.mu.iter().take(r / 2).map(|&m| m * m).sum::<f64>()
    }
}

/// Computes the skew-gradient signal `F = skew(W0^T G)` and its paired
/// singular-value magnitudes. Each singular value of a real skew matrix
/// appears twice; `mu` lists each pair once, descending.
pub fn skew_signal(w0: &Matrix, g: &Matrix) -> Result<SkewSignal> {
    if w0.shape() != g.shape() {
        return Err(Error::DimensionMismatch {
            op: "skew_signal",
            lhs: w0.shape(),
            rhs: g.shape(),
        });
    }
    let f = skew_part(&w0.transpose().matmul(g)?)?;
    let svd = f.svd()?;
    let d = f.rows();
    let mu = (0..d / 2)
        .map(|k| 0.5 * (svd.sigma[2 * k] + svd.sigma[2 * k + 1]))
        .collect();
    Ok(SkewSignal { f, mu })
}

/// Which support construction to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportMethod {
    /// Top right-singular subspace of the frozen weight.
    Principal,
    /// Top right-singular subspace of the calibration gradient.
    GradSvd,
    /// Top invariant subspace of `skew(W0^T G)`.
    SkewGrad,
    /// Seeded Gaussian rows, orthonormalized; task-agnostic control.
    Random,
    /// Selected standard-basis rows.
    Coordinate,
    /// Width-2 pair support from a butterfly stage.
    Butterfly,
    /// Caller-provided row-orthonormal matrix.
    Explicit,
}

impl SupportMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SupportMethod::Principal => "principal",
            SupportMethod::GradSvd => "gradsvd",
            SupportMethod::SkewGrad => "skewgrad",
            SupportMethod::Random => "random",
            SupportMethod::Coordinate => "coordinate",
            SupportMethod::Butterfly => "butterfly",
            SupportMethod::Explicit => "explicit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "principal" => Ok(SupportMethod::Principal),
            "gradsvd" => Ok(SupportMethod::GradSvd),
            "skewgrad" => Ok(SupportMethod::SkewGrad),
            "random" => Ok(SupportMethod::Random),
            "coordinate" => Ok(SupportMethod::Coordinate),
            "butterfly" => Ok(SupportMethod::Butterfly),
            "explicit" => Ok(SupportMethod::Explicit),
            other => Err(Error::config(format!("unknown support method '{other}'"))),
        }
    }

    pub fn provenance(&self) -> Provenance {
        match self {
            SupportMethod::Principal => Provenance::Principal,
            SupportMethod::GradSvd => Provenance::GradSvd,
            SupportMethod::SkewGrad => Provenance::SkewGrad,
            SupportMethod::Random => Provenance::Random,
            SupportMethod::Coordinate => Provenance::Coordinate,
            SupportMethod::Butterfly => Provenance::Butterfly,
            SupportMethod::Explicit => Provenance::Explicit,
        }
    }
}

/// A support construction request.
#[derive(Debug, Clone)]
pub struct SupportRequest {
    pub method: SupportMethod,
    pub r: usize,
    /// Seed for the random method.
    pub seed: Option<u64>,
    /// Coordinate indices for the coordinate method.
    pub indices: Option<Vec<usize>>,
    /// Butterfly stage (which bit pairs indices) and block (which pair).
    pub stage: Option<usize>,
    pub block: Option<usize>,
    /// Row-orthonormal matrix for the explicit method.
    pub explicit: Option<Matrix>,
}

impl SupportRequest {
    pub fn new(method: SupportMethod, r: usize) -> Self {
        SupportRequest {
            method,
            r,
            seed: None,
            indices: None,
            stage: None,
            block: None,
            explicit: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Builds a row-orthonormal support for the input dimension of `w0`.
///
/// Gradient-informed methods (`gradsvd`, `skewgrad`) require `g`; the
/// principal method uses only `w0`; `random` needs a seed. Butterfly
/// supports require the input dimension to be a power of two.
pub fn make_support(req: &SupportRequest, w0: &Matrix, g: Option<&Matrix>) -> Result<SupportBasis> {
    let d = w0.cols();
    if req.r == 0 {
        return Err(Error::config("support width r must be at least 1"));
    }
    if req.r > d {
        return Err(Error::config(format!(
            "support width r = {} exceeds input dimension d = {d}",
            req.r
        )));
    }
    match req.method {
        SupportMethod::Principal => {
            let svd = w0.svd()?;
            top_right_rows(&svd.vt, req.r, d, Provenance::Principal)
        }
        SupportMethod::GradSvd => {
            let g = g.ok_or(Error::MissingGradient { method: "gradsvd" })?;
            check_same_shape(w0, g)?;
            let svd = g.svd()?;
            top_right_rows(&svd.vt, req.r, d, Provenance::GradSvd)
        }
        SupportMethod::SkewGrad => {
            let g = g.ok_or(Error::MissingGradient { method: "skewgrad" })?;
            check_same_shape(w0, g)?;
            let signal = skew_signal(w0, g)?;
            skewgrad_support(&signal, req.r)
        }
        SupportMethod::Random => {
            let seed = req
                .seed
                .ok_or_else(|| Error::config("random support requires a seed"))?;
            let mut rng = Rng::seed_from_u64(seed);
            let p = Matrix::gaussian(req.r, d, &mut rng).qr_orthonormal_rows()?;
            SupportBasis::new(p, Provenance::Random)
        }
        SupportMethod::Coordinate => {
            let idx = req
                .indices
                .as_ref()
                .ok_or_else(|| Error::config("coordinate support requires indices"))?;
            if idx.len() != req.r {
                return Err(Error::config(format!(
                    "coordinate support: {} indices given but r = {}",
                    idx.len(),
                    req.r
                )));
            }
            SupportBasis::coordinate(d, idx)
        }
        SupportMethod::Butterfly => butterfly_support(d, req),
        SupportMethod::Explicit => {
            let p = req
                .explicit
                .as_ref()
                .ok_or_else(|| Error::config("explicit support requires a matrix"))?;
            if p.shape() != (req.r, d) {
                return Err(Error::DimensionMismatch {
                    op: "make_support(explicit)",
                    lhs: (req.r, d),
                    rhs: p.shape(),
                });
            }
            SupportBasis::new(p.clone(), Provenance::Explicit)
        }
    }
}

fn check_same_shape(w0: &Matrix, g: &Matrix) -> Result<()> {
    if w0.shape() != g.shape() {
        return Err(Error::DimensionMismatch {
            op: "make_support",
            lhs: w0.shape(),
            rhs: g.shape(),
        });
    }
    Ok(())
}

/// First r rows of vt, re-validated as a support.
fn top_right_rows(vt: &Matrix, r: usize, d: usize, prov: Provenance) -> Result<SupportBasis> {
    if vt.rows() < r {
        return Err(Error::DegenerateInput {
            op: "make_support",
            detail: format!(
                "only {} right-singular directions available, need r = {r} (d = {d})",
                vt.rows()
            ),
        });
    }
    SupportBasis::new(vt.row_block(0, r), prov)
}

/// SkewGrad: the singular values of a skew matrix come in equal pairs
/// (2k-1, 2k); rows 0..2*floor(r/2) of `vt` span the invariant subspace
/// of the top floor(r/2) pairs. For odd r the next singular direction is
/// appended to keep the requested width; it contributes no guaranteed
/// signal. The rows are re-orthonormalized before acceptance.
fn skewgrad_support(signal: &SkewSignal, r: usize) -> Result<SupportBasis> {
    let svd = signal.f.svd()?;
    let d = signal.f.rows();
    if svd.vt.rows() < r {
        return Err(Error::DegenerateInput {
            op: "make_support(skewgrad)",
            detail: format!("cannot extract {r} directions from a {d}-dim signal"),
        });
    }
    let p = svd.vt.row_block(0, r).qr_orthonormal_rows()?;
    SupportBasis::new(p, Provenance::SkewGrad)
}

/// Butterfly stage support: at stage `l`, index `j` with bit `l` clear is
/// paired with `j xor 2^l`. Width is fixed at 2 (one pair per block).
fn butterfly_support(d: usize, req: &SupportRequest) -> Result<SupportBasis> {
    if !d.is_power_of_two() {
        return Err(Error::config(format!(
            "butterfly support requires a power-of-two dimension, got {d}"
        )));
    }
    if req.r != 2 {
        return Err(Error::config(format!(
            "butterfly support has width 2, got r = {}",
            req.r
        )));
    }
    let stage = req
        .stage
        .ok_or_else(|| Error::config("butterfly support requires a stage"))?;
    let block = req
        .block
        .ok_or_else(|| Error::config("butterfly support requires a block index"))?;
    let stages = d.trailing_zeros() as usize;
    if stage >= stages {
        return Err(Error::config(format!(
            "butterfly stage {stage} out of range (d = {d} has {stages} stages)"
        )));
    }
    let stride = 1usize << stage;
    // Enumerate indices whose stage bit is clear, ascending.
    let lows: Vec<usize> = (0..d).filter(|j| j & stride == 0).collect();
    if block >= lows.len() {
        return Err(Error::config(format!(
            "butterfly block {block} out of range ({} pairs at stage {stage})",
            lows.len()
        )));
    }
    let j = lows[block];
    let mut p = Matrix::zeros(2, d);
    p.set(0, j, 1.0);
    p.set(1, j ^ stride, 1.0);
    SupportBasis::new(p, Provenance::Butterfly)
}

/// Directional derivative of the loss along the in-subspace direction
/// `E` at zero initialization: `<P F P^T, E>`.
pub fn directional_derivative(
    w0: &Matrix,
    g: &Matrix,
    p: &SupportBasis,
    e: &SkewParam,
) -> Result<f64> {
    if e.dim() != p.r() {
        return Err(Error::DimensionMismatch {
            op: "directional_derivative",
            lhs: (p.r(), p.r()),
            rhs: (e.dim(), e.dim()),
        });
    }
    let pg = projected_gradient(w0, g, p)?;
    pg.frobenius_dot(&e.to_matrix())
}

/// The gradient of the loss with respect to the in-subspace rotation
/// parameter at zero initialization: `P F P^T`, an r x r skew matrix.
pub fn projected_gradient(w0: &Matrix, g: &Matrix, p: &SupportBasis) -> Result<Matrix> {
    if p.d() != w0.cols() {
        return Err(Error::DimensionMismatch {
            op: "projected_gradient",
            lhs: (p.r(), p.d()),
            rhs: w0.shape(),
        });
    }
    let signal = skew_signal(w0, g)?;
    projected_signal(&signal, p)
}

/// `P F P^T` for a precomputed signal.
pub fn projected_signal(signal: &SkewSignal, p: &SupportBasis) -> Result<Matrix> {
    let pm = p.matrix();
    pm.matmul(&signal.f)?.matmul(&pm.transpose())
}

/// One adapted layer for multi-layer diagnostics.
#[derive(Debug, Clone)]
pub struct RhoLayer<'a> {
    pub w0: &'a Matrix,
    pub g: &'a Matrix,
    pub p: &'a SupportBasis,
}

/// Relative signal capture over a layer set with a shared width:
///
/// `rho = sum_l ||P_l F_l P_l^T||_F^2 / sum_l 2 sum_{k <= r/2} mu_{l,k}^2`.
///
/// Lies in [0, 1] up to rounding; equals 1 for SkewGrad supports measured
/// on their own calibration signal. When no skew signal exists anywhere
/// (zero denominator) every support is vacuously optimal and rho is
/// defined as 1.
pub fn rho_score(layers: &[RhoLayer<'_>]) -> Result<f64> {
    if layers.is_empty() {
        return Err(Error::config("rho_score requires at least one layer"));
    }
    let r = layers[0].p.r();
    if layers.iter().any(|l| l.p.r() != r) {
        return Err(Error::config(
            "rho_score requires a uniform support width across layers",
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for layer in layers {
        let signal = skew_signal(layer.w0, layer.g)?;
        let projected = projected_signal(&signal, layer.p)?;
        num += projected.frobenius_norm().powi(2);
        den += signal.signal_bound(r);
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(num / den)
}

/// Single-layer rho.
pub fn rho_score_single(w0: &Matrix, g: &Matrix, p: &SupportBasis) -> Result<f64> {
    rho_score(&[RhoLayer { w0, g, p }])
}

/// Outcome of the principal-support optimality test.
///
/// Splitting `V = [V_r V_perp]` by the SVD of `W0` and writing `F` in
/// that basis, a necessary condition for the principal support to
/// maximize the first-order signal is that the off-diagonal block
/// `F_{r,perp}` vanishes; maximality further requires the retained block
/// to carry the largest eigenvalue pairs, i.e. `rho(principal) = 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsoftOptimalityReport {
    pub r: usize,
    pub f_norm: f64,
    pub f_rperp_norm: f64,
    /// `||F_{r,perp}||_F <= 1e-8 * ||F||_F`.
    pub invariance_holds: bool,
    pub rho_principal: f64,
    /// `rho(principal) >= 1 - 1e-8`.
    pub rho_is_maximal: bool,
}

/// Tests whether the principal support of `w0` is first-order optimal for
/// the gradient signal `g`.
pub fn psoft_optimality_check(w0: &Matrix, g: &Matrix, r: usize) -> Result<PsoftOptimalityReport> {
    let d = w0.cols();
    if r >= d {
        return Err(Error::config(format!(
            "psoft_optimality_check requires r < d, got r = {r}, d = {d}"
        )));
    }
    check_same_shape(w0, g)?;
    let signal = skew_signal(w0, g)?;
    let svd = w0.svd()?;
    let k = svd.vt.rows();
    if k < r {
        return Err(Error::DegenerateInput {
            op: "psoft_optimality_check",
            detail: format!("w0 exposes only {k} right-singular directions, need {r}"),
        });
    }
    // Full orthogonal basis [V_r; V_rest; completion].
    let vr = svd.vt.row_block(0, r);
    let mut rest_rows = Vec::new();
    for i in r..k {
        rest_rows.extend_from_slice(svd.vt.row(i));
    }
    let rest = Matrix::from_vec_unchecked(k - r, d, rest_rows);
    let mut stacked = vr.matrix_stack(&rest);
    if stacked.rows() < d {
        let completion = stacked.orthonormal_row_complement();
        stacked = stacked.matrix_stack(&completion);
    }
    // Blocks of V^T F V with V = stacked^T.
    let fv = stacked.matmul(&signal.f)?.matmul(&stacked.transpose())?;
    let mut rperp_sq = 0.0;
    for i in 0..r {
        for j in r..d {
            rperp_sq += fv.get(i, j) * fv.get(i, j);
        }
    }
    let f_rperp_norm = rperp_sq.sqrt();
    let f_norm = signal.f.frobenius_norm();
    let principal = SupportBasis::new(vr, Provenance::Principal)?;
    let rho_principal = rho_score_single(w0, g, &principal)?;
    Ok(PsoftOptimalityReport {
        r,
        f_norm,
        f_rperp_norm,
        invariance_holds: f_rperp_norm <= 1e-8 * f_norm,
        rho_principal,
        rho_is_maximal: rho_principal >= 1.0 - 1e-8,
    })
}

impl Matrix {
    /// Vertical concatenation helper used by diagnostics.
    pub(crate) fn matrix_stack(&self, below: &Matrix) -> Matrix {
        assert_eq!(self.cols(), below.cols());
        let mut data = Vec::with_capacity((self.rows() + below.rows()) * self.cols());
        data.extend_from_slice(self.data());
        data.extend_from_slice(below.data());
        Matrix::from_vec_unchecked(self.rows() + below.rows(), self.cols(), data)
    }
}
