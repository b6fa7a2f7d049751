//! Planted-rotation regression tasks.
//!
//! A task is a linear regression `Y = W* X + noise` whose target weight
//! `W* = W0 S(P*, Q(E*))` is the frozen weight rotated by a hidden
//! adapter factor. The planted support/rotation pair gives an analytic
//! ground truth: the loss at `W*` is exactly the noise floor, and with
//! `W0 = I` and whitened inputs the skew-gradient signal at `W0` has
//! invariant subspace exactly `rowspan(P*)`, so support recovery can be
//! tested against a known answer.

use serde::{Deserialize, Serialize};

use crate::adapter::{LoftAdapter, LoftFactor, Provenance, SupportBasis};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::transform::{SkewParam, TransformSpec};

/// How the frozen weight is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `W0 = I` (requires `d_out == d_in`); the analytic support-recovery
    /// regime.
    Identity,
    /// Dense i.i.d. Gaussian entries.
    Gaussian,
    /// Random orthonormal rows (requires `d_out <= d_in`).
    RandomOrthogonal,
}

/// Parameters of a planted task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskConfig {
    pub d_in: usize,
    pub d_out: usize,
    /// Number of sample columns.
    pub n: usize,
    /// Width of the planted rotation.
    pub r_star: usize,
    pub seed: u64,
    /// Standard deviation of additive output noise; 0 for noiseless.
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_weight_mode")]
    pub weight_mode: WeightMode,
    /// Orthonormalize inputs so `X X^T / n = I` (requires `n >= d_in`).
    #[serde(default = "default_true")]
    pub whitened: bool,
    /// Scale of the planted skew parameter.
    #[serde(default = "default_rotation_scale")]
    pub rotation_scale: f64,
}

fn default_weight_mode() -> WeightMode {
    WeightMode::RandomOrthogonal
}

fn default_true() -> bool {
    true
}

fn default_rotation_scale() -> f64 {
    1.0
}

/// The hidden factor that generated the task.
#[derive(Debug, Clone)]
pub struct Planted {
    pub p_star: SupportBasis,
    pub e_star: SkewParam,
}

/// A linear regression task with inputs as columns.
#[derive(Debug, Clone)]
pub struct LinearTask {
    /// `d_in x n` inputs.
    pub x: Matrix,
    /// `d_out x n` targets.
    pub y: Matrix,
    /// Frozen weight.
    pub w0: Matrix,
    pub planted: Option<Planted>,
}

impl LinearTask {
    pub fn n(&self) -> usize {
        self.x.cols()
    }

    /// Mean-squared-error loss `(1/2n) ||W X - Y||_F^2`.
    pub fn loss(&self, w: &Matrix) -> Result<f64> {
        Ok(self.loss_and_grad(w)?.0)
    }

    /// Loss and its analytic gradient `(W X - Y) X^T / n` at `w`.
    pub fn loss_and_grad(&self, w: &Matrix) -> Result<(f64, Matrix)> {
        mse_loss_grad(w, &self.x, &self.y)
    }

    /// Loss/gradient restricted to the given sample columns.
    pub fn loss_and_grad_cols(&self, w: &Matrix, cols: &[usize]) -> Result<(f64, Matrix)> {
        if cols.is_empty() {
            return Err(Error::config("empty column subset"));
        }
        let xs = self.x.select_columns(cols);
        let ys = self.y.select_columns(cols);
        mse_loss_grad(w, &xs, &ys)
    }
}

/// `(1/2n) ||W X - Y||_F^2` and its gradient, `n` being the column count
/// of `x`.
pub fn mse_loss_grad(w: &Matrix, x: &Matrix, y: &Matrix) -> Result<(f64, Matrix)> {
    if w.cols() != x.rows() {
        return Err(Error::DimensionMismatch {
            op: "mse_loss_grad",
            lhs: w.shape(),
            rhs: x.shape(),
        });
    }
    if y.shape() != (w.rows(), x.cols()) {
        return Err(Error::DimensionMismatch {
            op: "mse_loss_grad",
            lhs: (w.rows(), x.cols()),
            rhs: y.shape(),
        });
    }
    let n = x.cols() as f64;
    let resid = w.matmul(x)?.sub(y)?;
    let loss = resid.frobenius_norm().powi(2) / (2.0 * n);
    let grad = resid.matmul(&x.transpose())?.scale(1.0 / n);
    Ok((loss, grad))
}

/// Draws a planted-rotation task from `cfg`.
pub fn make_planted_task(cfg: &TaskConfig) -> Result<LinearTask> {
    if cfg.n == 0 {
        return Err(Error::config("task needs at least one sample"));
    }
    if cfg.r_star == 0 || cfg.r_star > cfg.d_in {
        return Err(Error::config(format!(
            "planted width r_star = {} out of range for d_in = {}",
            cfg.r_star, cfg.d_in
        )));
    }
    if cfg.whitened && cfg.n < cfg.d_in {
        return Err(Error::config(format!(
            "whitened inputs need n >= d_in, got n = {} < {}",
            cfg.n, cfg.d_in
        )));
    }
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let w0 = match cfg.weight_mode {
        WeightMode::Identity => {
            if cfg.d_out != cfg.d_in {
                return Err(Error::config(
                    "identity weight mode requires d_out == d_in",
                ));
            }
            Matrix::identity(cfg.d_in)
        }
        WeightMode::Gaussian => Matrix::gaussian(cfg.d_out, cfg.d_in, &mut rng),
        WeightMode::RandomOrthogonal => {
            if cfg.d_out > cfg.d_in {
                return Err(Error::config(
                    "random orthogonal weight mode requires d_out <= d_in",
                ));
            }
            Matrix::gaussian(cfg.d_out, cfg.d_in, &mut rng).qr_orthonormal_rows()?
        }
    };
    let p_star = SupportBasis::new(
        Matrix::gaussian(cfg.r_star, cfg.d_in, &mut rng).qr_orthonormal_rows()?,
        Provenance::Explicit,
    )?;
    let e_star = SkewParam::random(cfg.r_star, cfg.rotation_scale, &mut rng);
    let hidden = LoftAdapter::new(
        w0.clone(),
        vec![LoftFactor::new(
            p_star.clone(),
            TransformSpec::Orthogonal(e_star.clone()),
        )?],
    )?;
    let w_star = hidden.merge()?;

    let x = if cfg.whitened {
        // Orthonormal rows scaled by sqrt(n): X X^T / n = I.
        let q = Matrix::gaussian(cfg.d_in, cfg.n, &mut rng).qr_orthonormal_rows()?;
        q.scale((cfg.n as f64).sqrt())
    } else {
        Matrix::gaussian(cfg.d_in, cfg.n, &mut rng)
    };
    let mut y = w_star.matmul(&x)?;
    if cfg.noise > 0.0 {
        let noise = Matrix::gaussian(cfg.d_out, cfg.n, &mut rng).scale(cfg.noise);
        y = y.add(&noise)?;
    }
    Ok(LinearTask {
        x,
        y,
        w0,
        planted: Some(Planted { p_star, e_star }),
    })
}

/// Deterministic 80/20 split of `0..n` into (train, eval) columns. The
/// eval side holds at least one column.
pub fn holdout_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = Rng::seed_from_u64(seed ^ 0x5eed_5111_7000_0001);
    let perm = rng.permutation(n);
    if n == 1 {
        // Degenerate: train and eval share the single column.
        return (perm.clone(), perm);
    }
    let n_eval = (n / 5).clamp(1, n - 1);
    let eval: Vec<usize> = perm[..n_eval].to_vec();
    let train: Vec<usize> = perm[n_eval..].to_vec();
    (train, eval)
}

/// Sums gradients at `w0` over `k` seeded mini-batches of `batch_size`
/// samples (accumulation by summation, not averaging; supports built from
/// the result are invariant to that positive scale).
///
/// Batches are consecutive blocks of a seeded permutation, wrapping when
/// `k * batch_size` exceeds the sample count; indices within a batch are
/// sorted so a single batch covering everything reproduces the full-batch
/// gradient bit-for-bit.
pub fn calibrate(
    task: &LinearTask,
    k_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Matrix> {
    let cols: Vec<usize> = (0..task.n()).collect();
    calibrate_on(task, &cols, k_batches, batch_size, seed)
}

/// [`calibrate`] restricted to a column subset (training-only batches).
pub fn calibrate_on(
    task: &LinearTask,
    cols: &[usize],
    k_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Matrix> {
    if cols.is_empty() {
        return Err(Error::config("calibration needs a nonempty column set"));
    }
    if k_batches == 0 {
        return Err(Error::config("calibration needs at least one batch"));
    }
    if batch_size == 0 || batch_size > cols.len() {
        return Err(Error::config(format!(
            "calibration batch size {batch_size} out of range (1..={})",
            cols.len()
        )));
    }
    let mut rng = Rng::seed_from_u64(seed ^ 0xca11b8a7e5_u64);
    let perm = rng.permutation(cols.len());
    let mut total = Matrix::zeros(task.w0.rows(), task.w0.cols());
    for b in 0..k_batches {
        let mut batch: Vec<usize> = (0..batch_size)
            .map(|i| cols[perm[(b * batch_size + i) % cols.len()]])
            .collect();
        batch.sort_unstable();
        batch.dedup();
        let (_, grad) = task.loss_and_grad_cols(&task.w0, &batch)?;
        total = total.add(&grad)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> TaskConfig {
        TaskConfig {
            d_in: 8,
            d_out: 6,
            n: 32,
            r_star: 3,
            seed: 42,
            noise: 0.0,
            weight_mode: WeightMode::RandomOrthogonal,
            whitened: true,
            rotation_scale: 1.0,
        }
    }

    #[test]
    fn loss_at_planted_optimum_is_zero() {
        let task = make_planted_task(&base_cfg()).unwrap();
        let planted = task.planted.as_ref().unwrap();
        let hidden = LoftAdapter::new(
            task.w0.clone(),
            vec![LoftFactor::new(
                planted.p_star.clone(),
                TransformSpec::Orthogonal(planted.e_star.clone()),
            )
            .unwrap()],
        )
        .unwrap();
        let w_star = hidden.merge().unwrap();
        assert_eq!(task.loss(&w_star).unwrap(), 0.0);
    }

    #[test]
    fn zero_rotation_means_zero_gradient_at_base() {
        let mut cfg = base_cfg();
        cfg.rotation_scale = 0.0;
        let task = make_planted_task(&cfg).unwrap();
        let (loss, grad) = task.loss_and_grad(&task.w0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.max_abs() <= 1e-15);
    }

    #[test]
    fn whitened_inputs_have_identity_second_moment() {
        let task = make_planted_task(&base_cfg()).unwrap();
        let n = task.n() as f64;
        let gram = task.x.matmul(&task.x.transpose()).unwrap().scale(1.0 / n);
        let dev = gram
            .sub(&Matrix::identity(task.x.rows()))
            .unwrap()
            .frobenius_norm();
        assert!(dev <= 1e-10, "X X^T / n deviates by {dev:.3e}");
    }

    #[test]
    fn scalar_hand_case() {
        // W = 2, X = [1], Y = [1]: loss = 0.5, G = 1.
        let task = LinearTask {
            x: Matrix::from_rows(&[&[1.0]]),
            y: Matrix::from_rows(&[&[1.0]]),
            w0: Matrix::from_rows(&[&[1.0]]),
            planted: None,
        };
        let (loss, grad) = task.loss_and_grad(&Matrix::from_rows(&[&[2.0]])).unwrap();
        assert_eq!(loss, 0.5);
        assert_eq!(grad.get(0, 0), 1.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut cfg = base_cfg();
        cfg.noise = 0.1;
        let task = make_planted_task(&cfg).unwrap();
        let mut rng = Rng::seed_from_u64(7);
        let w = Matrix::gaussian(cfg.d_out, cfg.d_in, &mut rng);
        let (_, grad) = task.loss_and_grad(&w).unwrap();
        let h = 1e-6;
        for i in 0..cfg.d_out {
            for j in 0..cfg.d_in {
                let mut hi = w.clone();
                let mut lo = w.clone();
                hi.set(i, j, w.get(i, j) + h);
                lo.set(i, j, w.get(i, j) - h);
                let fd = (task.loss(&hi).unwrap() - task.loss(&lo).unwrap()) / (2.0 * h);
                let denom = grad.get(i, j).abs().max(1e-3);
                assert!(
                    (fd - grad.get(i, j)).abs() / denom <= 1e-6,
                    "grad mismatch at ({i},{j}): fd {fd:.9e} vs {:.9e}",
                    grad.get(i, j)
                );
            }
        }
    }

    #[test]
    fn calibrate_full_cover_equals_full_batch() {
        let task = make_planted_task(&base_cfg()).unwrap();
        let full = task.loss_and_grad(&task.w0).unwrap().1;
        let cal = calibrate(&task, 1, task.n(), 3).unwrap();
        // One batch covering every sample, sorted: bit-identical.
        assert_eq!(cal.data(), full.data());
    }

    #[test]
    fn calibrate_zero_rotation_is_zero() {
        let mut cfg = base_cfg();
        cfg.rotation_scale = 0.0;
        let task = make_planted_task(&cfg).unwrap();
        let cal = calibrate(&task, 4, 8, 1).unwrap();
        assert!(cal.max_abs() <= 1e-14);
    }

    #[test]
    fn calibrate_scale_invariance_of_supports() {
        // Summed (not averaged) accumulation only scales the gradient;
        // SVD-derived supports are unchanged under positive scaling.
        use crate::support::{make_support, SupportMethod, SupportRequest};
        let task = make_planted_task(&base_cfg()).unwrap();
        let g1 = calibrate(&task, 1, 8, 5).unwrap();
        let g_scaled = g1.scale(8.0);
        for method in [SupportMethod::GradSvd, SupportMethod::SkewGrad] {
            let req = SupportRequest::new(method, 3);
            let p1 = make_support(&req, &task.w0, Some(&g1)).unwrap();
            let p2 = make_support(&req, &task.w0, Some(&g_scaled)).unwrap();
            assert!(p1.matrix().max_abs_diff(p2.matrix()) <= 1e-9);
        }
    }

    #[test]
    fn calibrate_is_seed_deterministic() {
        let task = make_planted_task(&base_cfg()).unwrap();
        let a = calibrate(&task, 4, 8, 11).unwrap();
        let b = calibrate(&task, 4, 8, 11).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn holdout_split_is_disjoint_and_total() {
        let (train, eval) = holdout_split(50, 9);
        assert_eq!(train.len() + eval.len(), 50);
        assert_eq!(eval.len(), 10);
        let mut seen = [false; 50];
        for &i in train.iter().chain(&eval) {
            assert!(!seen[i], "index {i} appears twice");
            seen[i] = true;
        }
    }

    #[test]
    fn infeasible_dims_rejected() {
        let mut cfg = base_cfg();
        cfg.r_star = 20;
        assert!(make_planted_task(&cfg).is_err());
        let mut cfg = base_cfg();
        cfg.n = 4; // whitened needs n >= d_in
        assert!(make_planted_task(&cfg).is_err());
        let mut cfg = base_cfg();
        cfg.weight_mode = WeightMode::Identity; // d_out != d_in
        assert!(make_planted_task(&cfg).is_err());
    }
}
