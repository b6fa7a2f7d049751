//! Adapter training: chain-rule gradients, optimizers, the controlled
//! probe protocol, and dynamics logging.
//!
//! Gradients flow analytically: the loss gradient at the merged weight is
//! pulled back through each factor to its in-subspace transform, then
//! (for orthogonal factors) through the Cayley map to the skew parameter.
//! At zero initialization the single-factor gradient reduces exactly to
//! `P skew(W0^T G) P^T`, which ties the training loop to the first-order
//! support analysis.

use serde::{Deserialize, Serialize};

use crate::adapter::{LoftAdapter, LoftFactor, SupportBasis};
use crate::error::{Error, Result};
use crate::harness::task::{holdout_split, LinearTask};
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::support::rho_score_single;
use crate::transform::{cayley_adjoint, TransformSpec};

/// Optimizer selection. Plain SGD is the default; the momentum and
/// adam-like variants exist for dynamics-shape experiments only.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    SgdMomentum { beta: f64 },
    AdamLike { beta1: f64, beta2: f64, eps: f64 },
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Mini-batch size; omit for full-batch steps.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Checkpoint cadence; 0 records only the initial and final steps.
    #[serde(default)]
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            issues.push(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        if let Some(b) = self.batch_size {
            if b == 0 {
                issues.push("batch_size must be at least 1 when given".to_string());
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { issues })
        }
    }
}

/// Loss divergence threshold relative to the initial loss.
const DIVERGENCE_FACTOR: f64 = 1e6;

/// Gradients of the training loss with respect to every trainable factor
/// transform, evaluated by the chain rule at the current parameters.
///
/// Returns one entry per factor: `None` for fixed transforms, otherwise
/// the gradient with respect to the skew parameter (orthogonal) or the
/// dense transform (free).
pub fn adapter_gradients(
    adapter: &LoftAdapter,
    task: &LinearTask,
    cols: &[usize],
) -> Result<(f64, Vec<Option<Matrix>>)> {
    let merged = adapter.merge()?;
    let (loss, grad_w) = task.loss_and_grad_cols(&merged, cols)?;
    let l = adapter.factors.len();
    // Prefix weights W0 S_1 .. S_{l-1}; the implicit product form keeps
    // single-factor adapters free of d x d intermediates.
    let mut prefixes = Vec::with_capacity(l);
    let mut w_left = adapter.base_weight().clone();
    for (idx, f) in adapter.factors.iter().enumerate() {
        prefixes.push(w_left.clone());
        if idx + 1 < l {
            w_left = apply_factor_right(&w_left, f)?;
        }
    }
    // Suffix products S_{l+1} .. S_L; None denotes the identity.
    let mut suffixes: Vec<Option<Matrix>> = vec![None; l];
    for idx in (0..l.saturating_sub(1)).rev() {
        let next = &adapter.factors[idx + 1];
        suffixes[idx] = Some(match &suffixes[idx + 1] {
            Some(rest) => next.build_s()?.matmul(rest)?,
            None => next.build_s()?,
        });
    }
    let mut grads = Vec::with_capacity(l);
    for (idx, f) in adapter.factors.iter().enumerate() {
        match &f.transform {
            TransformSpec::Fixed(_) => grads.push(None),
            transform => {
                let p = f.support.matrix();
                // dL/dT = P W_left^T G_W S_right^T P^T.
                let right = match &suffixes[idx] {
                    Some(s) => grad_w.matmul(&s.transpose())?,
                    None => grad_w.clone(),
                };
                let core = prefixes[idx].transpose().matmul(&right)?;
                let grad_t = p.matmul(&core)?.matmul(&p.transpose())?;
                match transform {
                    TransformSpec::Orthogonal(e) => {
                        grads.push(Some(cayley_adjoint(e, &grad_t)?));
                    }
                    TransformSpec::Free(_) => grads.push(Some(grad_t)),
                    TransformSpec::Fixed(_) => unreachable!(),
                }
            }
        }
    }
    Ok((loss, grads))
}

/// `W <- W S` without materializing `S`: `W + (W P^T)(T - I) P`.
fn apply_factor_right(w: &Matrix, f: &LoftFactor) -> Result<Matrix> {
    let p = f.support.matrix();
    let t = f.transform.materialize()?;
    let wpt = w.matmul(&p.transpose())?;
    let bump = wpt
        .matmul(&t.sub(&Matrix::identity(f.support.r()))?)?
        .matmul(p)?;
    w.add(&bump)
}

/// Per-factor optimizer state, operating on flattened parameters.
struct OptState {
    momentum: Vec<f64>,
    second: Vec<f64>,
    step: usize,
}

impl OptState {
    fn new(len: usize) -> Self {
        OptState {
            momentum: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }

    /// Maps a raw gradient to a parameter delta (to be subtracted after
    /// scaling by the learning rate).
    fn direction(&mut self, kind: OptimizerKind, grad: &[f64], out: &mut [f64]) {
        self.step += 1;
        match kind {
            OptimizerKind::Sgd => out.copy_from_slice(grad),
            OptimizerKind::SgdMomentum { beta } => {
                for (m, (&g, o)) in self.momentum.iter_mut().zip(grad.iter().zip(out.iter_mut())) {
                    *m = beta * *m + g;
                    *o = *m;
                }
            }
            OptimizerKind::AdamLike { beta1, beta2, eps } => {
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for i in 0..grad.len() {
                    self.momentum[i] = beta1 * self.momentum[i] + (1.0 - beta1) * grad[i];
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mhat = self.momentum[i] / bc1;
                    let vhat = self.second[i] / bc2;
                    out[i] = mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

/// Applies one optimizer update to a factor, given the gradient from
/// [`adapter_gradients`].
fn apply_update(
    factor: &mut LoftFactor,
    grad: &Matrix,
    state: &mut OptState,
    kind: OptimizerKind,
    lr: f64,
) {
    match &mut factor.transform {
        TransformSpec::Orthogonal(e) => {
            let dim = e.dim();
            let mut flat = Vec::with_capacity(dim * (dim - 1) / 2);
            for i in 1..dim {
                for j in 0..i {
                    flat.push(grad.get(i, j));
                }
            }
            let mut dir = vec![0.0; flat.len()];
            state.direction(kind, &flat, &mut dir);
            let mut k = 0;
            for i in 1..dim {
                for j in 0..i {
                    e.lower_mut()[k] -= lr * dir[k];
                    let _ = (i, j);
                    k += 1;
                }
            }
        }
        TransformSpec::Free(t) => {
            let mut dir = vec![0.0; grad.data().len()];
            state.direction(kind, grad.data(), &mut dir);
            for (v, d) in t.data_mut().iter_mut().zip(&dir) {
                *v -= lr * d;
            }
        }
        TransformSpec::Fixed(_) => {}
    }
}

/// One logged checkpoint of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub train_loss: f64,
    pub eval_metric: f64,
    /// Max relative singular-value drift of the merged weight against the
    /// base weight; recorded only for all-orthogonal adapters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sv_drift: Option<f64>,
}

/// Full record of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsRecord {
    pub checkpoints: Vec<Checkpoint>,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_step: Option<usize>,
    pub seed: u64,
}

/// Trains the adapter's transforms on the task's training split, logging
/// train loss and held-out metric at the configured checkpoints.
///
/// Non-finite losses abort the run with a diagnostic record rather than
/// an error; orthogonal-kind checkpoints carry the singular-value drift
/// so geometry preservation is observable at every logged step.
pub fn train(task: &LinearTask, adapter: &mut LoftAdapter, cfg: &TrainConfig) -> Result<DynamicsRecord> {
    cfg.validate()?;
    let (train_cols, eval_cols) = holdout_split(task.n(), cfg.seed);
    train_on_split(task, adapter, cfg, &train_cols, &eval_cols)
}

/// [`train`] with an explicit (train, eval) column split; used by sweeps
/// to subsample supervision deterministically.
pub fn train_on_split(
    task: &LinearTask,
    adapter: &mut LoftAdapter,
    cfg: &TrainConfig,
    train_cols: &[usize],
    eval_cols: &[usize],
) -> Result<DynamicsRecord> {
    cfg.validate()?;
    if train_cols.is_empty() || eval_cols.is_empty() {
        return Err(Error::config("train and eval splits must be nonempty"));
    }
    let all_orthogonal = adapter
        .factors
        .iter()
        .all(|f| f.transform.is_orthogonal());
    let base_sv = if all_orthogonal {
        Some(adapter.base_weight().svd()?.sigma)
    } else {
        None
    };
    let mut states: Vec<OptState> = adapter
        .factors
        .iter()
        .map(|f| {
            let dim = f.support.r();
            let len = match &f.transform {
                TransformSpec::Orthogonal(_) => dim * (dim - 1) / 2,
                TransformSpec::Free(_) => dim * dim,
                TransformSpec::Fixed(_) => 0,
            };
            OptState::new(len)
        })
        .collect();
    let mut rng = Rng::seed_from_u64(cfg.seed ^ 0x7ea1_ba7c_0000_0001);
    let mut record = DynamicsRecord {
        checkpoints: Vec::new(),
        diverged: false,
        abort_step: None,
        seed: cfg.seed,
    };
    let mut initial_loss = None;
    for step in 0..=cfg.steps {
        let is_checkpoint = step == 0
            || step == cfg.steps
            || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        if is_checkpoint {
            let merged = adapter.merge()?;
            let (train_loss, _) = task.loss_and_grad_cols(&merged, train_cols)?;
            let (eval_metric, _) = task.loss_and_grad_cols(&merged, eval_cols)?;
            let sv_drift = match &base_sv {
                Some(sv0) => Some(sv_drift(&merged, sv0)?),
                None => None,
            };
            record.checkpoints.push(Checkpoint {
                step,
                train_loss,
                eval_metric,
                sv_drift,
            });
        }
        if step == cfg.steps {
            break;
        }
        let batch: Vec<usize> = match cfg.batch_size {
            Some(b) if b < train_cols.len() => {
                let mut idx: Vec<usize> =
                    (0..b).map(|_| train_cols[rng.below(train_cols.len())]).collect();
                idx.sort_unstable();
                idx.dedup();
                idx
            }
            _ => train_cols.to_vec(),
        };
        let (loss, grads) = adapter_gradients(adapter, task, &batch)?;
        let init = *initial_loss.get_or_insert(loss.max(f64::MIN_POSITIVE));
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * init {
            record.diverged = true;
            record.abort_step = Some(step);
            break;
        }
        for ((factor, grad), state) in adapter
            .factors
            .iter_mut()
            .zip(grads.iter())
            .zip(states.iter_mut())
        {
            if let Some(g) = grad {
                apply_update(factor, g, state, cfg.optimizer, cfg.learning_rate);
            }
        }
    }
    Ok(record)
}

/// Max relative drift between the singular values of `merged` and the
/// reference spectrum.
fn sv_drift(merged: &Matrix, sv0: &[f64]) -> Result<f64> {
    let sv1 = merged.svd()?.sigma;
    let scale = sv0.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    Ok(sv0
        .iter()
        .zip(&sv1)
        .fold(0.0_f64, |m, (&a, &b)| m.max((a - b).abs() / scale)))
}

/// Report of a controlled probe run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Held-out probe loss after each step; index 0 is the base model.
    pub trajectory: Vec<f64>,
    /// `(t, L(0) - L(t))` at the standard horizons present in the run.
    pub deltas: Vec<(usize, f64)>,
    /// Relative signal capture of the probed support, measured on the
    /// training-split gradient at the frozen weight.
    pub rho: f64,
    pub seed: u64,
    pub diverged: bool,
}

/// Probe-loss horizons reported alongside the trajectory.
pub const PROBE_HORIZONS: [usize; 4] = [1, 5, 10, 20];

/// Controlled probe: freezes everything except a single orthogonal
/// factor on `support` (zero-initialized), runs plain SGD on the training
/// split, and records held-out loss each step. Step 0 equals the base
/// model's loss because the zero parameter materializes to the identity.
///
/// Divergence is data, not an exception: the trajectory is padded with
/// its last finite value and flagged.
pub fn probe(task: &LinearTask, support: &SupportBasis, cfg: &TrainConfig) -> Result<ProbeReport> {
    cfg.validate()?;
    let (train_cols, eval_cols) = holdout_split(task.n(), cfg.seed);
    let r = support.r();
    let mut adapter = LoftAdapter::new(
        task.w0.clone(),
        vec![LoftFactor::new(
            support.clone(),
            TransformSpec::orthogonal_identity(r),
        )?],
    )?;
    let (_, train_grad) = task.loss_and_grad_cols(&task.w0, &train_cols)?;
    let rho = rho_score_single(&task.w0, &train_grad, support)?;

    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    let eval_loss = |a: &LoftAdapter| -> Result<f64> {
        let merged = a.merge()?;
        Ok(task.loss_and_grad_cols(&merged, &eval_cols)?.0)
    };
    let initial = eval_loss(&adapter)?;
    trajectory.push(initial);
    let mut diverged = false;
    for _step in 0..cfg.steps {
        if !diverged {
            let (train_loss, grads) = adapter_gradients(&adapter, task, &train_cols)?;
            if !train_loss.is_finite() || train_loss > DIVERGENCE_FACTOR * initial.max(1e-300) {
                diverged = true;
            } else if let Some(g) = &grads[0] {
                // Probe protocol is plain SGD regardless of cfg.optimizer.
                if let TransformSpec::Orthogonal(e) = &mut adapter.factors[0].transform {
                    e.step_in_place(g, cfg.learning_rate);
                }
            }
        }
        if diverged {
            let last = *trajectory.last().expect("nonempty");
            trajectory.push(last);
        } else {
            let loss = eval_loss(&adapter)?;
            if loss.is_finite() {
                trajectory.push(loss);
            } else {
                diverged = true;
                let last = *trajectory.last().expect("nonempty");
                trajectory.push(last);
            }
        }
    }
    let deltas = PROBE_HORIZONS
        .iter()
        .filter(|&&t| t <= cfg.steps)
        .map(|&t| (t, trajectory[0] - trajectory[t]))
        .collect();
    Ok(ProbeReport {
        trajectory,
        deltas,
        rho,
        seed: cfg.seed,
        diverged,
    })
}
