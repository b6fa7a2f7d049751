//! Grid sweeps and the early-validation diagnostic.
//!
//! Sweep cells (grid point x support method x seed) are pure functions of
//! their configuration: each cell builds its own task, calibration
//! gradient, support, and training run from the cell seed. Cells may run
//! on worker threads; results land in a pre-indexed table so the output
//! is byte-stable regardless of thread count.

use serde::{Deserialize, Serialize};

use crate::adapter::{LoftAdapter, LoftFactor};
use crate::error::{Error, Result};
use crate::harness::task::{calibrate_on, holdout_split, make_planted_task, TaskConfig};
use crate::harness::train::{train_on_split, probe, ProbeReport, TrainConfig};
use crate::adapter::SupportBasis;
use crate::support::{make_support, SupportMethod, SupportRequest};
use crate::transform::TransformSpec;

/// Which configuration axis a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Fraction of the training split used for supervision.
    DataFraction,
    /// Support width.
    Rank,
    /// Number of calibration mini-batches.
    CalibrationSize,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::DataFraction => "data_fraction",
            SweepAxis::Rank => "rank",
            SweepAxis::CalibrationSize => "calibration_size",
        }
    }
}

/// Sweep specification on top of a base task/train configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// Grid values: fractions in (0, 1] for data_fraction, integers for
    /// rank and calibration_size.
    pub grid: Vec<f64>,
    pub methods: Vec<SupportMethod>,
    pub seeds: Vec<u64>,
    /// Support width when the axis does not vary it.
    pub rank: usize,
    /// Calibration batches when the axis does not vary them.
    #[serde(default = "default_calibration_batches")]
    pub calibration_batches: usize,
    /// Calibration batch size; defaults to full-coverage batches, which
    /// keeps gradient-informed supports exact on whitened noiseless
    /// tasks. Set a sub-batch size to study calibration noise.
    #[serde(default)]
    pub calibration_batch_size: Option<usize>,
}

fn default_calibration_batches() -> usize {
    4
}

/// One sweep cell result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis_value: f64,
    pub method: String,
    pub seed: u64,
    /// Final held-out loss; lower is better.
    pub metric: f64,
    /// Divergence or per-cell failure marker; flagged cells keep the
    /// sweep runnable.
    pub flagged: bool,
}

/// Mean/std summary per (axis value, method).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub axis_value: f64,
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub cells: usize,
}

/// Sweep output: per-cell rows plus aggregated summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SweepSummaryRow>,
}

/// Runs one sweep cell: task from the cell seed, calibration on the
/// training split, support construction, training, final eval loss.
pub fn run_sweep_cell(
    task_cfg: &TaskConfig,
    train_cfg: &TrainConfig,
    sweep_cfg: &SweepConfig,
    axis_value: f64,
    method: SupportMethod,
    seed: u64,
) -> Result<SweepCell> {
    let mut task_cfg = task_cfg.clone();
    task_cfg.seed = seed;
    let mut train_cfg = train_cfg.clone();
    train_cfg.seed = seed;

    let mut rank = sweep_cfg.rank;
    let mut k_batches = sweep_cfg.calibration_batches;
    let mut fraction = 1.0;
    match sweep_cfg.axis {
        SweepAxis::DataFraction => fraction = axis_value,
        SweepAxis::Rank => rank = axis_value as usize,
        SweepAxis::CalibrationSize => k_batches = axis_value as usize,
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!(
            "data fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if rank == 0 {
        return Err(Error::config("sweep rank must be at least 1"));
    }

    let task = make_planted_task(&task_cfg)?;
    let (train_cols, eval_cols) = holdout_split(task.n(), train_cfg.seed);
    // Supervision subsampling keeps a prefix of the (seeded) split so the
    // 100% cell is bit-identical to a standalone run.
    let n_used = ((train_cols.len() as f64) * fraction).ceil() as usize;
    let used_cols: Vec<usize> = train_cols[..n_used.clamp(1, train_cols.len())].to_vec();

    // Reduced supervision also reduces what calibration can see; the
    // other axes calibrate on the full sample set.
    let cal_cols: Vec<usize> = match sweep_cfg.axis {
        SweepAxis::DataFraction => used_cols.clone(),
        _ => (0..task.n()).collect(),
    };
    let batch_size = sweep_cfg
        .calibration_batch_size
        .unwrap_or(cal_cols.len())
        .min(cal_cols.len());
    let g_cal = calibrate_on(&task, &cal_cols, k_batches, batch_size, seed)?;

    let mut req = SupportRequest::new(method, rank);
    if method == SupportMethod::Random {
        req = req.with_seed(seed ^ 0x5eed_0a09_0000_0001);
    }
    let support = make_support(&req, &task.w0, Some(&g_cal))?;
    let mut adapter = LoftAdapter::new(
        task.w0.clone(),
        vec![LoftFactor::new(
            support,
            TransformSpec::orthogonal_identity(rank),
        )?],
    )?;
    let record = train_on_split(&task, &mut adapter, &train_cfg, &used_cols, &eval_cols)?;
    let metric = record
        .checkpoints
        .last()
        .map(|c| c.eval_metric)
        .unwrap_or(f64::MAX);
    Ok(SweepCell {
        axis_value,
        method: method.name().to_string(),
        seed,
        metric,
        flagged: record.diverged,
    })
}

/// Runs the full grid. `threads` caps cell-level parallelism; 1 runs
/// sequentially and any value yields identical output because each cell
/// is a pure function of its configuration.
pub fn run_sweep(
    task_cfg: &TaskConfig,
    train_cfg: &TrainConfig,
    sweep_cfg: &SweepConfig,
    threads: usize,
) -> Result<SweepTable> {
    if sweep_cfg.grid.is_empty() {
        return Err(Error::config("sweep grid must be nonempty"));
    }
    if sweep_cfg.methods.is_empty() {
        return Err(Error::config("sweep needs at least one support method"));
    }
    if sweep_cfg.seeds.is_empty() {
        return Err(Error::config("sweep needs at least one seed"));
    }
    let mut jobs = Vec::new();
    for &axis_value in &sweep_cfg.grid {
        for &method in &sweep_cfg.methods {
            for &seed in &sweep_cfg.seeds {
                jobs.push((axis_value, method, seed));
            }
        }
    }
    let threads = threads.max(1).min(jobs.len().max(1));
    let mut cells: Vec<Option<SweepCell>> = vec![None; jobs.len()];
    if threads == 1 {
        for (slot, &(axis_value, method, seed)) in cells.iter_mut().zip(&jobs) {
            *slot = Some(cell_or_flagged(
                task_cfg, train_cfg, sweep_cfg, axis_value, method, seed,
            )?);
        }
    } else {
        let chunk = jobs.len().div_ceil(threads);
        let results: Vec<Result<Vec<SweepCell>>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for piece in jobs.chunks(chunk) {
                handles.push(scope.spawn(move || {
                    piece
                        .iter()
                        .map(|&(axis_value, method, seed)| {
                            cell_or_flagged(
                                task_cfg, train_cfg, sweep_cfg, axis_value, method, seed,
                            )
                        })
                        .collect()
                }));
            }
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut idx = 0;
        for batch in results {
            for cell in batch? {
                cells[idx] = Some(cell);
                idx += 1;
            }
        }
    }
    let cells: Vec<SweepCell> = cells.into_iter().map(|c| c.expect("cell filled")).collect();

    // Order-stable aggregation in grid x method order.
    let mut summary = Vec::new();
    for &axis_value in &sweep_cfg.grid {
        for &method in &sweep_cfg.methods {
            let vals: Vec<f64> = cells
                .iter()
                .filter(|c| {
                    c.axis_value == axis_value && c.method == method.name() && !c.flagged
                })
                .map(|c| c.metric)
                .collect();
            if vals.is_empty() {
                continue;
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (vals.len() - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            summary.push(SweepSummaryRow {
                axis_value,
                method: method.name().to_string(),
                mean,
                std,
                cells: vals.len(),
            });
        }
    }
    Ok(SweepTable {
        axis: sweep_cfg.axis,
        cells,
        summary,
    })
}

/// Configuration errors abort the sweep; numerical failures inside a cell
/// become flagged rows so the rest of the grid still runs.
fn cell_or_flagged(
    task_cfg: &TaskConfig,
    train_cfg: &TrainConfig,
    sweep_cfg: &SweepConfig,
    axis_value: f64,
    method: SupportMethod,
    seed: u64,
) -> Result<SweepCell> {
    match run_sweep_cell(task_cfg, train_cfg, sweep_cfg, axis_value, method, seed) {
        Ok(cell) => Ok(cell),
        Err(err) if err.is_numerical() => Ok(SweepCell {
            axis_value,
            method: method.name().to_string(),
            seed,
            metric: f64::MAX,
            flagged: true,
        }),
        Err(err) => Err(err),
    }
}

/// Early-validation diagnostic for one support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EarlyValidationColumn {
    pub label: String,
    /// Validation loss at steps 1..=25.
    pub losses: Vec<f64>,
    pub avg_5_20: f64,
    pub avg_5_25: f64,
    pub wins_1_25: usize,
    pub wins_5_25: usize,
}

/// Early-validation table across supports (shared task, config, seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EarlyValidationTable {
    pub columns: Vec<EarlyValidationColumn>,
}

/// Number of early steps recorded.
pub const EARLY_STEPS: usize = 25;

/// Trains one single-factor orthogonal adapter per support under the
/// shared config and records validation loss over the first 25 update
/// steps. Wins count, per step, the support with the lowest loss (first
/// listed wins ties).
pub fn early_validation(
    task: &crate::harness::task::LinearTask,
    supports: &[(String, SupportBasis)],
    cfg: &TrainConfig,
) -> Result<EarlyValidationTable> {
    cfg.validate()?;
    if supports.is_empty() {
        return Err(Error::config("early_validation needs at least one support"));
    }
    if cfg.steps < EARLY_STEPS {
        return Err(Error::config(format!(
            "early_validation needs at least {EARLY_STEPS} steps, got {}",
            cfg.steps
        )));
    }
    let mut trajectories = Vec::new();
    for (label, support) in supports {
        let mut adapter = LoftAdapter::new(
            task.w0.clone(),
            vec![LoftFactor::new(
                support.clone(),
                TransformSpec::orthogonal_identity(support.r()),
            )?],
        )?;
        let mut run_cfg = cfg.clone();
        run_cfg.eval_every = 1;
        let record = crate::harness::train::train(task, &mut adapter, &run_cfg)?;
        let losses: Vec<f64> = (1..=EARLY_STEPS)
            .map(|s| {
                record
                    .checkpoints
                    .iter()
                    .find(|c| c.step == s)
                    .map(|c| c.eval_metric)
                    .unwrap_or(f64::MAX)
            })
            .collect();
        trajectories.push((label.clone(), losses));
    }
    let window = |losses: &[f64], lo: usize, hi: usize| -> f64 {
        let vals = &losses[lo - 1..hi];
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let mut wins_1_25 = vec![0usize; supports.len()];
    let mut wins_5_25 = vec![0usize; supports.len()];
    for step in 1..=EARLY_STEPS {
        let mut best = 0;
        for (i, (_, losses)) in trajectories.iter().enumerate() {
            if losses[step - 1] < trajectories[best].1[step - 1] {
                best = i;
            }
        }
        wins_1_25[best] += 1;
        if step >= 5 {
            wins_5_25[best] += 1;
        }
    }
    let columns = trajectories
        .into_iter()
        .enumerate()
        .map(|(i, (label, losses))| EarlyValidationColumn {
            avg_5_20: window(&losses, 5, 20),
            avg_5_25: window(&losses, 5, 25),
            wins_1_25: wins_1_25[i],
            wins_5_25: wins_5_25[i],
            label,
            losses,
        })
        .collect();
    Ok(EarlyValidationTable { columns })
}

/// Convenience: probe a support freshly constructed from a calibration
/// gradient with `k` batches; used by calibration-size diagnostics.
pub fn probe_with_calibration(
    task_cfg: &TaskConfig,
    train_cfg: &TrainConfig,
    method: SupportMethod,
    rank: usize,
    k_batches: usize,
    batch_size: usize,
) -> Result<(ProbeReport, f64)> {
    let task = make_planted_task(task_cfg)?;
    let g_cal = crate::harness::task::calibrate(&task, k_batches, batch_size, train_cfg.seed)?;
    let mut req = SupportRequest::new(method, rank);
    if method == SupportMethod::Random {
        req = req.with_seed(train_cfg.seed);
    }
    let support = make_support(&req, &task.w0, Some(&g_cal))?;
    // Rho measured on the calibration signal the support was built from.
    let rho_cal = crate::support::rho_score_single(&task.w0, &g_cal, &support)?;
    let report = probe(&task, &support, train_cfg)?;
    Ok((report, rho_cal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::task::WeightMode;
    use crate::harness::train::OptimizerKind;

    fn task_cfg(seed: u64) -> TaskConfig {
        TaskConfig {
            d_in: 8,
            d_out: 8,
            n: 40,
            r_star: 4,
            seed,
            noise: 0.0,
            weight_mode: WeightMode::RandomOrthogonal,
            whitened: true,
            rotation_scale: 1.0,
        }
    }

    fn train_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.5,
            steps: 200,
            optimizer: OptimizerKind::Sgd,
            batch_size: None,
            seed,
            eval_every: 0,
        }
    }

    fn sweep_cfg(axis: SweepAxis, grid: Vec<f64>) -> SweepConfig {
        SweepConfig {
            axis,
            grid,
            methods: vec![SupportMethod::SkewGrad, SupportMethod::Random],
            seeds: vec![1, 2, 3],
            rank: 4,
            calibration_batches: 4,
            calibration_batch_size: None,
        }
    }

    #[test]
    fn full_fraction_cell_matches_standalone_run() {
        let tc = task_cfg(0);
        let cfg = train_cfg(0);
        let sc = sweep_cfg(SweepAxis::DataFraction, vec![0.5, 1.0]);
        let cell = run_sweep_cell(&tc, &cfg, &sc, 1.0, SupportMethod::SkewGrad, 7).unwrap();
        // Standalone reconstruction of the same cell.
        let again = run_sweep_cell(&tc, &cfg, &sc, 1.0, SupportMethod::SkewGrad, 7).unwrap();
        assert_eq!(cell.metric.to_bits(), again.metric.to_bits());
    }

    #[test]
    fn rank_sweep_recovers_planted_width() {
        // Noiseless planted r* = 4: the matched-rank skewgrad cell solves
        // the task to near zero.
        let tc = task_cfg(5);
        let cfg = train_cfg(5);
        let mut sc = sweep_cfg(SweepAxis::Rank, vec![2.0, 4.0]);
        sc.methods = vec![SupportMethod::SkewGrad];
        sc.seeds = vec![11];
        let table = run_sweep(&tc, &cfg, &sc, 1).unwrap();
        let cell_r4 = table
            .cells
            .iter()
            .find(|c| c.axis_value == 4.0)
            .expect("r = 4 cell");
        assert!(
            cell_r4.metric <= 1e-6,
            "matched-rank cell should solve the task, got {:.3e}",
            cell_r4.metric
        );
    }

    #[test]
    fn sweep_is_deterministic_and_thread_invariant() {
        let tc = task_cfg(9);
        let cfg = train_cfg(9);
        let sc = sweep_cfg(SweepAxis::DataFraction, vec![0.5, 1.0]);
        let t1 = run_sweep(&tc, &cfg, &sc, 1).unwrap();
        let t2 = run_sweep(&tc, &cfg, &sc, 1).unwrap();
        let t4 = run_sweep(&tc, &cfg, &sc, 4).unwrap();
        let key = |t: &SweepTable| -> Vec<(f64, String, u64, u64)> {
            t.cells
                .iter()
                .map(|c| (c.axis_value, c.method.clone(), c.seed, c.metric.to_bits()))
                .collect()
        };
        assert_eq!(key(&t1), key(&t2));
        assert_eq!(key(&t1), key(&t4));
    }

    #[test]
    fn calibration_sweep_rho_saturates() {
        let tc = task_cfg(13);
        let mut cfg = train_cfg(13);
        cfg.steps = 20;
        for k in [1usize, 2, 4, 8] {
            let (_, rho) = probe_with_calibration(
                &tc,
                &cfg,
                SupportMethod::SkewGrad,
                4,
                k,
                4,
            )
            .unwrap();
            assert!(
                (rho - 1.0).abs() <= 1e-8,
                "rho at k = {k} is {rho}, expected 1"
            );
        }
    }

    #[test]
    fn sweep_summary_groups_cells() {
        let tc = task_cfg(17);
        let cfg = train_cfg(17);
        let sc = sweep_cfg(SweepAxis::DataFraction, vec![1.0]);
        let table = run_sweep(&tc, &cfg, &sc, 1).unwrap();
        assert_eq!(table.cells.len(), 2 * 3);
        assert_eq!(table.summary.len(), 2);
        for row in &table.summary {
            assert_eq!(row.cells, 3);
        }
    }

    #[test]
    fn early_validation_identical_supports_identical_columns() {
        let tc = task_cfg(21);
        let task = make_planted_task(&tc).unwrap();
        let mut cfg = train_cfg(21);
        cfg.steps = 25;
        cfg.learning_rate = 0.2;
        let g = task.loss_and_grad(&task.w0).unwrap().1;
        let sup = make_support(
            &SupportRequest::new(SupportMethod::SkewGrad, 4),
            &task.w0,
            Some(&g),
        )
        .unwrap();
        let table = early_validation(
            &task,
            &[("a".into(), sup.clone()), ("b".into(), sup)],
            &cfg,
        )
        .unwrap();
        assert_eq!(table.columns[0].losses, table.columns[1].losses);
        // First-listed support takes tied wins.
        assert_eq!(table.columns[0].wins_1_25, 25);
        assert_eq!(table.columns[1].wins_1_25, 0);
    }

    #[test]
    fn early_validation_single_support_wins_everything() {
        let tc = task_cfg(23);
        let task = make_planted_task(&tc).unwrap();
        let mut cfg = train_cfg(23);
        cfg.steps = 25;
        let g = task.loss_and_grad(&task.w0).unwrap().1;
        let sup = make_support(
            &SupportRequest::new(SupportMethod::SkewGrad, 4),
            &task.w0,
            Some(&g),
        )
        .unwrap();
        let table = early_validation(&task, &[("only".into(), sup)], &cfg).unwrap();
        assert_eq!(table.columns[0].wins_1_25, 25);
        assert_eq!(table.columns[0].wins_5_25, 21);
    }

    #[test]
    fn early_validation_skewgrad_beats_random_across_seeds() {
        // Window 5-25 average over 20 planted tasks: the skew-informed
        // support wins by at least twice the pooled standard error.
        let mut skew_avgs = Vec::new();
        let mut rand_avgs = Vec::new();
        for s in 0..20u64 {
            let mut tc = task_cfg(400 + s);
            tc.d_in = 12;
            tc.d_out = 12;
            tc.n = 48;
            let task = make_planted_task(&tc).unwrap();
            let mut cfg = train_cfg(500 + s);
            cfg.steps = 25;
            cfg.learning_rate = 0.3;
            let g = crate::harness::task::calibrate(&task, 4, 12, cfg.seed).unwrap();
            let skew = make_support(
                &SupportRequest::new(SupportMethod::SkewGrad, 4),
                &task.w0,
                Some(&g),
            )
            .unwrap();
            let rand = make_support(
                &SupportRequest::new(SupportMethod::Random, 4).with_seed(600 + s),
                &task.w0,
                None,
            )
            .unwrap();
            let table = early_validation(
                &task,
                &[("skewgrad".into(), skew), ("random".into(), rand)],
                &cfg,
            )
            .unwrap();
            skew_avgs.push(table.columns[0].avg_5_25);
            rand_avgs.push(table.columns[1].avg_5_25);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let sem = |v: &[f64]| {
            let m = mean(v);
            let var =
                v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
            (var / v.len() as f64).sqrt()
        };
        let pooled = (sem(&skew_avgs).powi(2) + sem(&rand_avgs).powi(2)).sqrt();
        let (ms, mr) = (mean(&skew_avgs), mean(&rand_avgs));
        // Lower validation loss is better.
        assert!(
            mr - ms >= 2.0 * pooled,
            "skewgrad {ms:.4} vs random {mr:.4}, pooled sem {pooled:.4}"
        );
    }

    #[test]
    fn early_validation_requires_enough_steps() {
        let tc = task_cfg(27);
        let task = make_planted_task(&tc).unwrap();
        let mut cfg = train_cfg(27);
        cfg.steps = 10;
        let g = task.loss_and_grad(&task.w0).unwrap().1;
        let sup = make_support(
            &SupportRequest::new(SupportMethod::SkewGrad, 4),
            &task.w0,
            Some(&g),
        )
        .unwrap();
        assert!(early_validation(&task, &[("x".into(), sup)], &cfg).is_err());
    }
}
