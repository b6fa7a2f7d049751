//! Command implementations. Each command validates its inputs, runs the
//! corresponding library code, writes CSV/JSON artifacts with pinned
//! column schemas into the output directory, and records a manifest.
//!
//! CSV schemas (stable, covered by golden tests):
//!   probe:    step,loss
//!   dynamics: step,train_loss,eval_metric
//!   sweep:    axis,method,seed,metric
//!   recover:  method,residual,pass

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use loft_kit::adapter::{LoftAdapter, LoftFactor, SupportBasis};
use loft_kit::checks::{run_all, CheckOptions};
use loft_kit::error::{Error, Result};
use loft_kit::harness::{
    calibrate, early_validation, make_planted_task, probe, run_sweep, train, LinearTask,
    TrainConfig,
};
use loft_kit::linalg::Matrix;
use loft_kit::recovery::verify_equivalence;
use loft_kit::support::{
    make_support, projected_signal, psoft_optimality_check, rho_score_single, skew_signal,
    SupportMethod, SupportRequest,
};
use loft_kit::transform::TransformSpec;

use crate::config::{CalibrationSpec, RecoverWeights, RunConfig, SupportSpec};
use crate::manifest::RunManifest;
use crate::svg::{line_plot, Series};

/// What a command produced; `success = false` maps to exit code 1.
pub struct CommandOutcome {
    pub success: bool,
    pub summary: String,
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(dir: &Path, name: &str, text: &str, manifest: &mut RunManifest) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| Error::Io { path, source })?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    value: &T,
    manifest: &mut RunManifest,
) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("serializable report");
    write_text(dir, name, &json, manifest)
}

// ---------------------------------------------------------------------
// check
// ---------------------------------------------------------------------

pub fn cmd_check(seed: u64, out: &Path, corrupt_support: bool) -> Result<CommandOutcome> {
    ensure_out_dir(out)?;
    let opts = CheckOptions { corrupt_support };
    let reports = run_all(seed, &opts)?;
    let pass = loft_kit::checks::all_pass(&reports);
    let mut manifest = RunManifest::new("check", format!("seed={seed}").as_bytes(), vec![seed]);
    write_json(out, "check.json", &reports, &mut manifest)?;
    let mut summary = String::new();
    for r in &reports {
        let _ = writeln!(
            summary,
            "{} {:<28} trials={:<4} max_residual={:.3e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.suite,
            r.trials,
            r.max_residual
        );
    }
    if !pass {
        // Dump the failing suites for diagnosis.
        let failing: Vec<_> = reports.iter().filter(|r| !r.pass).collect();
        let json = serde_json::to_string_pretty(&failing).expect("serializable");
        write_text(out, "check_failures.json", &json, &mut manifest)?;
    }
    manifest.write(out)?;
    Ok(CommandOutcome {
        success: pass,
        summary,
    })
}

// ---------------------------------------------------------------------
// support
// ---------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct SupportDiagnostics {
    method: String,
    r: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_norm_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f_rperp_norm: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_support(
    weights_path: &Path,
    grad_path: Option<&Path>,
    method: SupportMethod,
    r: usize,
    seed: u64,
    indices: Option<Vec<usize>>,
    stage: Option<usize>,
    block: Option<usize>,
    out: &Path,
) -> Result<CommandOutcome> {
    ensure_out_dir(out)?;
    let w0 = Matrix::read_csv(weights_path)?;
    let grad = grad_path.map(Matrix::read_csv).transpose()?;
    let mut req = SupportRequest::new(method, r).with_seed(seed);
    req.indices = indices;
    req.stage = stage;
    req.block = block;
    let support = make_support(&req, &w0, grad.as_ref())?;
    let mut diagnostics = SupportDiagnostics {
        method: method.name().to_string(),
        r,
        rho: None,
        bound: None,
        grad_norm_sq: None,
        f_rperp_norm: None,
    };
    if let Some(g) = &grad {
        let signal = skew_signal(&w0, g)?;
        diagnostics.rho = Some(rho_score_single(&w0, g, &support)?);
        diagnostics.bound = Some(signal.signal_bound(r));
        diagnostics.grad_norm_sq =
            Some(projected_signal(&signal, &support)?.frobenius_norm().powi(2));
        if r < w0.cols() {
            diagnostics.f_rperp_norm = Some(psoft_optimality_check(&w0, g, r)?.f_rperp_norm);
        }
    }
    let config_line = format!(
        "weights={} grad={:?} method={} r={r} seed={seed}",
        weights_path.display(),
        grad_path.map(|p| p.display().to_string()),
        method.name()
    );
    let mut manifest = RunManifest::new("support", config_line.as_bytes(), vec![seed]);
    support.matrix().write_csv(&out.join("P.csv"))?;
    manifest.outputs.push("P.csv".to_string());
    write_json(out, "support.json", &diagnostics, &mut manifest)?;
    manifest.write(out)?;
    Ok(CommandOutcome {
        success: true,
        summary: format!(
            "support method={} r={r} rho={:?}\n",
            method.name(),
            diagnostics.rho
        ),
    })
}

// ---------------------------------------------------------------------
// shared probe/train plumbing
// ---------------------------------------------------------------------

struct PreparedSupport {
    label: String,
    support: SupportBasis,
}

/// Builds every requested support for the task, deduplicating labels.
fn prepare_supports(
    task: &LinearTask,
    specs: &[SupportSpec],
    calibration: &CalibrationSpec,
    train_cfg: &TrainConfig,
) -> Result<Vec<PreparedSupport>> {
    let needs_grad = specs.iter().any(|s| {
        matches!(s.method, SupportMethod::GradSvd | SupportMethod::SkewGrad)
    });
    let g_cal = if needs_grad {
        let batch = calibration.batch_size.unwrap_or(task.n()).min(task.n());
        Some(calibrate(task, calibration.batches, batch, train_cfg.seed)?)
    } else {
        None
    };
    let mut out = Vec::new();
    let mut counts = std::collections::BTreeMap::new();
    for spec in specs {
        let mut req = SupportRequest::new(spec.method, spec.r);
        req.seed = Some(spec.seed.unwrap_or(train_cfg.seed));
        req.indices = spec.indices.clone();
        req.stage = spec.stage;
        req.block = spec.block;
        let support = make_support(&req, &task.w0, g_cal.as_ref())?;
        let base = spec.method.name().to_string();
        let n = counts.entry(base.clone()).or_insert(0usize);
        let label = if *n == 0 { base } else { format!("{}_{n}", spec.method.name()) };
        *n += 1;
        out.push(PreparedSupport { label, support });
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------

pub fn cmd_probe(config_path: &Path, out: &Path, svg: bool) -> Result<CommandOutcome> {
    ensure_out_dir(out)?;
    let (config, bytes) = crate::config::load_config(config_path, &["task", "supports", "train"])?;
    let (task_cfg, specs, train_cfg) = probe_sections(&config)?;
    let calibration = config.calibration.clone().unwrap_or_default();
    let task = make_planted_task(&task_cfg)?;
    let supports = prepare_supports(&task, &specs, &calibration, &train_cfg)?;
    let mut manifest = RunManifest::new("probe", &bytes, vec![task_cfg.seed, train_cfg.seed]);
    let mut reports = Vec::new();
    let mut summary = String::new();
    for ps in &supports {
        let report = probe(&task, &ps.support, &train_cfg)?;
        let mut csv = String::from("step,loss\n");
        for (step, loss) in report.trajectory.iter().enumerate() {
            let _ = writeln!(csv, "{step},{loss}");
        }
        write_text(out, &format!("probe_{}.csv", ps.label), &csv, &mut manifest)?;
        let _ = writeln!(
            summary,
            "probe {} rho={:.6} deltas={:?}{}",
            ps.label,
            report.rho,
            report.deltas,
            if report.diverged { " DIVERGED" } else { "" }
        );
        reports.push((ps.label.clone(), report));
    }
    let json: Vec<_> = reports
        .iter()
        .map(|(label, r)| {
            serde_json::json!({
                "label": label,
                "rho": r.rho,
                "deltas": r.deltas,
                "diverged": r.diverged,
                "seed": r.seed,
            })
        })
        .collect();
    write_json(out, "probe.json", &json, &mut manifest)?;
    if svg {
        let series: Vec<Series<'_>> = reports
            .iter()
            .map(|(label, r)| Series {
                label,
                points: r
                    .trajectory
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| (i as f64, l))
                    .collect(),
            })
            .collect();
        let doc = line_plot("held-out probe loss", "step", "loss", &series);
        write_text(out, "probe.svg", &doc, &mut manifest)?;
    }
    manifest.write(out)?;
    Ok(CommandOutcome {
        success: true,
        summary,
    })
}

fn probe_sections(config: &RunConfig) -> Result<(loft_kit::harness::TaskConfig, Vec<SupportSpec>, TrainConfig)> {
    let task = config
        .task
        .clone()
        .ok_or_else(|| Error::config("missing 'task' section"))?;
    let supports = config
        .supports
        .clone()
        .ok_or_else(|| Error::config("missing 'supports' section"))?;
    if supports.is_empty() {
        return Err(Error::config("'supports' must not be empty"));
    }
    let train = config
        .train
        .clone()
        .ok_or_else(|| Error::config("missing 'train' section"))?;
    train.validate()?;
    Ok((task, supports, train))
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

pub fn cmd_train(config_path: &Path, out: &Path, svg: bool) -> Result<CommandOutcome> {
    ensure_out_dir(out)?;
    let (config, bytes) = crate::config::load_config(config_path, &["task", "supports", "train"])?;
    let (task_cfg, specs, train_cfg) = probe_sections(&config)?;
    let calibration = config.calibration.clone().unwrap_or_default();
    let task = make_planted_task(&task_cfg)?;
    let supports = prepare_supports(&task, &specs, &calibration, &train_cfg)?;
    let mut manifest = RunManifest::new("train", &bytes, vec![task_cfg.seed, train_cfg.seed]);
    let mut summaries = Vec::new();
    let mut summary = String::new();
    let mut all_series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for ps in &supports {
        let mut adapter = LoftAdapter::new(
            task.w0.clone(),
            vec![LoftFactor::new(
                ps.support.clone(),
                TransformSpec::orthogonal_identity(ps.support.r()),
            )?],
        )?;
        let record = train(&task, &mut adapter, &train_cfg)?;
        let mut csv = String::from("step,train_loss,eval_metric\n");
        for cp in &record.checkpoints {
            let _ = writeln!(csv, "{},{},{}", cp.step, cp.train_loss, cp.eval_metric);
        }
        write_text(out, &format!("train_{}.csv", ps.label), &csv, &mut manifest)?;
        let last = record.checkpoints.last();
        let _ = writeln!(
            summary,
            "train {} final_train={:?} final_eval={:?}{}",
            ps.label,
            last.map(|c| c.train_loss),
            last.map(|c| c.eval_metric),
            if record.diverged { " DIVERGED" } else { "" }
        );
        all_series.push((
            ps.label.clone(),
            record
                .checkpoints
                .iter()
                .map(|c| (c.step as f64, c.eval_metric))
                .collect(),
        ));
        summaries.push(serde_json::json!({
            "label": ps.label,
            "diverged": record.diverged,
            "abort_step": record.abort_step,
            "final": last.map(|c| serde_json::json!({
                "step": c.step,
                "train_loss": c.train_loss,
                "eval_metric": c.eval_metric,
                "sv_drift": c.sv_drift,
            })),
        }));
    }
    write_json(out, "train.json", &summaries, &mut manifest)?;
    if svg {
        let series: Vec<Series<'_>> = all_series
            .iter()
            .map(|(label, pts)| Series {
                label,
                points: pts.clone(),
            })
            .collect();
        let doc = line_plot("held-out metric", "step", "loss", &series);
        write_text(out, "train.svg", &doc, &mut manifest)?;
    }
    manifest.write(out)?;
    Ok(CommandOutcome {
        success: true,
        summary,
    })
}

// ---------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------

pub fn cmd_sweep(config_path: &Path, out: &Path, threads: usize) -> Result<CommandOutcome> {
    ensure_out_dir(out)?;
    let (config, bytes) = crate::config::load_config(config_path, &["task", "train", "sweep"])?;
    let task_cfg = config
        .task
        .clone()
        .ok_or_else(|| Error::config("missing 'task' section"))?;
    let train_cfg = config
        .train
        .clone()
        .ok_or_else(|| Error::config("missing 'train' section"))?;
    let sweep_cfg = config
        .sweep
        .clone()
        .ok_or_else(|| Error::config("missing 'sweep' section"))?;
    let table = run_sweep(&task_cfg, &train_cfg, &sweep_cfg, threads)?;
    let mut manifest = RunManifest::new("sweep", &bytes, sweep_cfg.seeds.clone());
    let mut csv = String::from("axis,method,seed,metric\n");
    for cell in &table.cells {
        let _ = writeln!(csv, "{},{},{},{}", cell.axis_value, cell.method, cell.seed, cell.metric);
    }
    write_text(out, "sweep.csv", &csv, &mut manifest)?;
    write_json(out, "sweep.json", &table, &mut manifest)?;
    let mut summary = format!("sweep axis={} cells={}\n", table.axis.name(), table.cells.len());
    for row in &table.summary {
        let _ = writeln!(
            summary,
            "  {}={} {}: mean={:.6e} std={:.3e} (n={})",
            table.axis.name(),
            row.axis_value,
            row.method,
            row.mean,
            row.std,
            row.cells
        );
    }
    let flagged = table.cells.iter().filter(|c| c.flagged).count();
    if flagged > 0 {
        let _ = writeln!(summary, "  flagged cells: {flagged}");
    }
    manifest.write(out)?;
    Ok(CommandOutcome {
        success: true,
        summary,
    })
}

// ---------------------------------------------------------------------
// early-validation (exposed through probe config reuse)
// ---------------------------------------------------------------------

pub fn cmd_early_validation(config_path: &Path, out: &Path) -> Result<CommandOutcome> {
    ensure_out_dir(out)?;
    let (config, bytes) = crate::config::load_config(config_path, &["task", "supports", "train"])?;
    let (task_cfg, specs, train_cfg) = probe_sections(&config)?;
    let calibration = config.calibration.clone().unwrap_or_default();
    let task = make_planted_task(&task_cfg)?;
    let prepared = prepare_supports(&task, &specs, &calibration, &train_cfg)?;
    let labeled: Vec<(String, SupportBasis)> = prepared
        .into_iter()
        .map(|p| (p.label, p.support))
        .collect();
    let table = early_validation(&task, &labeled, &train_cfg)?;
    let mut manifest =
        RunManifest::new("early-validation", &bytes, vec![task_cfg.seed, train_cfg.seed]);
    let mut csv = String::from("step");
    for col in &table.columns {
        let _ = write!(csv, ",{}", col.label);
    }
    csv.push('\n');
    for step in 1..=loft_kit::harness::EARLY_STEPS {
        let _ = write!(csv, "{step}");
        for col in &table.columns {
            let _ = write!(csv, ",{}", col.losses[step - 1]);
        }
        csv.push('\n');
    }
    write_text(out, "early_validation.csv", &csv, &mut manifest)?;
    write_json(out, "early_validation.json", &table, &mut manifest)?;
    let mut summary = String::new();
    for col in &table.columns {
        let _ = writeln!(
            summary,
            "early {} avg5-20={:.6} avg5-25={:.6} wins1-25={} wins5-25={}",
            col.label, col.avg_5_20, col.avg_5_25, col.wins_1_25, col.wins_5_25
        );
    }
    manifest.write(out)?;
    Ok(CommandOutcome {
        success: true,
        summary,
    })
}

// ---------------------------------------------------------------------
// recover
// ---------------------------------------------------------------------

pub fn cmd_recover(config_path: &Path, out: &Path) -> Result<CommandOutcome> {
    ensure_out_dir(out)?;
    let (config, bytes) = crate::config::load_config(config_path, &["recover"])?;
    let section = config
        .recover
        .clone()
        .ok_or_else(|| Error::config("missing 'recover' section"))?;
    if section.configs.is_empty() {
        return Err(Error::config("'recover.configs' must not be empty"));
    }
    let (w0, seed) = match &section.w0 {
        RecoverWeights::Path { path } => (Matrix::read_csv(path)?, 0),
        RecoverWeights::Random { d_out, d_in, seed } => {
            let mut rng = loft_kit::rng::Rng::seed_from_u64(*seed);
            (Matrix::gaussian(*d_out, *d_in, &mut rng), *seed)
        }
    };
    let mut manifest = RunManifest::new("recover", &bytes, vec![seed]);
    let mut reports = Vec::new();
    let mut csv = String::from("method,residual,pass\n");
    let mut summary = String::new();
    let mut all_pass = true;
    for cfg in &section.configs {
        let report = verify_equivalence(cfg, &w0)?;
        let _ = writeln!(csv, "{},{},{}", report.method, report.residual, report.pass);
        let _ = writeln!(
            summary,
            "{} {:<10} residual={:.3e}",
            if report.pass { "PASS" } else { "FAIL" },
            report.method,
            report.residual
        );
        all_pass &= report.pass;
        reports.push(report);
    }
    write_text(out, "recover.csv", &csv, &mut manifest)?;
    write_json(out, "recover.json", &reports, &mut manifest)?;
    manifest.write(out)?;
    Ok(CommandOutcome {
        success: all_pass,
        summary,
    })
}

// ---------------------------------------------------------------------
// helpers shared with tests
// ---------------------------------------------------------------------

/// Resolves the output directory, defaulting to the current directory.
pub fn resolve_out(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("."))
}

/// Reads the worker-thread cap from `LOFT_KIT_THREADS`; defaults to 1 for
/// fully deterministic cell ordering (results are identical either way).
pub fn thread_cap() -> Result<usize> {
    match std::env::var("LOFT_KIT_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::config(format!("LOFT_KIT_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(1),
    }
}
