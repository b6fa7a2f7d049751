//! Seeded property-check suites.
//!
//! Each suite draws its instances from a child stream of the given seed,
//! measures the worst residual against the property's tolerance, and
//! reports pass/fail. The CLI `check` command runs all suites and gates
//! its exit status on them; the acceptance tests reuse the same code so
//! CI and the command line cannot drift apart.

use serde::{Deserialize, Serialize};

use crate::adapter::{row_gram, LoftAdapter, LoftFactor, Provenance, SupportBasis};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::recovery::{verify_equivalence, GivensSpec, RecoveryConfig};
use crate::rng::Rng;
use crate::support::{
    make_support, projected_signal, rho_score_single, skew_signal, SupportMethod, SupportRequest,
};
use crate::transform::{cayley, cayley_adjoint, SkewParam, TransformSpec};

/// Outcome of one property suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub trials: usize,
    /// Worst residual observed, in the units stated by `detail`.
    pub max_residual: f64,
    pub pass: bool,
    pub detail: String,
}

/// Check-run options. `corrupt_support` injects a non-orthonormal basis
/// into the geometry suite as a negative control; the run must fail.
#[derive(Debug, Clone, Default)]
pub struct CheckOptions {
    pub corrupt_support: bool,
}

/// Runs every suite with deterministic child seeds.
pub fn run_all(seed: u64, opts: &CheckOptions) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        geometry_preservation(seed ^ 0x01, 200, opts.corrupt_support)?,
        initial_gradient_exactness(seed ^ 0x02, 100)?,
        signal_bound(seed ^ 0x03, 500)?,
        rho_maximality(seed ^ 0x04, 100)?,
        recovery_residuals(seed ^ 0x05)?,
        principal_invariance(seed ^ 0x06, 100)?,
        delta_rank(seed ^ 0x07, 200)?,
        cayley_contract(seed ^ 0x08, 100)?,
    ])
}

pub fn all_pass(reports: &[SuiteReport]) -> bool {
    reports.iter().all(|r| r.pass)
}

fn random_support(rng: &mut Rng, r: usize, d: usize) -> Result<SupportBasis> {
    SupportBasis::new(
        Matrix::gaussian(r, d, rng).qr_orthonormal_rows()?,
        Provenance::Random,
    )
}

/// Geometry preservation: an orthogonal in-subspace transform leaves the
/// row Gram matrix, every singular value, both norms, and the rank of the
/// frozen weight unchanged.
pub fn geometry_preservation(seed: u64, trials: usize, corrupt: bool) -> Result<SuiteReport> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let d = 4 + rng.below(29); // up to 32
        let d_out = 2 + rng.below(31);
        let r = 1 + rng.below(d.min(8));
        let w0 = Matrix::gaussian(d_out, d, &mut rng);
        let support = if corrupt && trial == trials / 2 {
            // Negative control: rows deliberately not orthonormal.
            let mut bad = Matrix::gaussian(r, d, &mut rng).qr_orthonormal_rows()?;
            let v = bad.get(0, 0);
            bad.set(0, 0, v + 0.5);
            SupportBasis::new_unchecked(bad, Provenance::Random)
        } else {
            random_support(&mut rng, r, d)?
        };
        let e = SkewParam::random(r, 1.0, &mut rng);
        let adapter = LoftAdapter::new(
            w0.clone(),
            vec![LoftFactor::new(support, TransformSpec::Orthogonal(e))?],
        )?;
        let merged = adapter.merge()?;

        let g0 = row_gram(&w0);
        let g1 = row_gram(&merged);
        let gram_resid =
            g1.sub(&g0)?.frobenius_norm() / (1e-9 * g0.frobenius_norm().max(f64::MIN_POSITIVE));
        worst = worst.max(gram_resid);

        let sv0 = w0.svd()?.sigma;
        let sv1 = merged.svd()?.sigma;
        let scale = sv0[0].max(f64::MIN_POSITIVE);
        for (a, b) in sv0.iter().zip(&sv1) {
            worst = worst.max((a - b).abs() / (1e-8 * scale));
        }
        let fro_resid = (merged.frobenius_norm() - w0.frobenius_norm()).abs()
            / (1e-10 * w0.frobenius_norm().max(f64::MIN_POSITIVE));
        worst = worst.max(fro_resid);
        let spec_resid = (sv1[0] - sv0[0]).abs() / (1e-10 * scale);
        worst = worst.max(spec_resid);

        let rank0 = w0.svd()?.numerical_rank(1e-8);
        let rank1 = merged.svd()?.numerical_rank(1e-8);
        if rank0 != rank1 {
            worst = f64::INFINITY;
        }
    }
    Ok(SuiteReport {
        suite: "geometry_preservation".into(),
        trials,
        max_residual: worst,
        pass: worst <= 1.0,
        detail: "worst residual across gram/singular-value/norm/rank checks, relative to its tolerance".into(),
    })
}

/// At zero initialization the adapter gradient is exactly the compressed
/// skew signal, and the directional derivative matches central finite
/// differences through the full loss chain.
pub fn initial_gradient_exactness(seed: u64, trials: usize) -> Result<SuiteReport> {
    use crate::harness::{adapter_gradients, make_planted_task, TaskConfig, WeightMode};
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let d = 6 + rng.below(7);
        let r = 2 + rng.below(3);
        let cfg = TaskConfig {
            d_in: d,
            d_out: d,
            n: 4 * d,
            r_star: 2,
            seed: seed.wrapping_add(trial as u64),
            noise: 0.1,
            weight_mode: WeightMode::Gaussian,
            whitened: false,
            rotation_scale: 1.0,
        };
        let task = make_planted_task(&cfg)?;
        let support = random_support(&mut rng, r, d)?;
        let adapter = LoftAdapter::new(
            task.w0.clone(),
            vec![LoftFactor::new(
                support.clone(),
                TransformSpec::orthogonal_identity(r),
            )?],
        )?;
        let cols: Vec<usize> = (0..task.n()).collect();
        let (_, grads) = adapter_gradients(&adapter, &task, &cols)?;
        let analytic = grads[0].as_ref().expect("trainable factor");
        let (_, g) = task.loss_and_grad(&task.w0)?;
        let expected = projected_signal(&skew_signal(&task.w0, &g)?, &support)?;
        worst = worst.max(analytic.max_abs_diff(&expected) / 1e-10);

        // Directional derivative vs central differences through the loss.
        let e_dir = SkewParam::random(r, 1.0, &mut rng);
        let dd = expected.frobenius_dot(&e_dir.to_matrix())?;
        let h = 1e-6;
        let loss_at = |t: f64| -> Result<f64> {
            let scaled = SkewParam::from_lower(
                r,
                e_dir.lower().iter().map(|&v| v * t).collect(),
            )?;
            let a = LoftAdapter::new(
                task.w0.clone(),
                vec![LoftFactor::new(
                    support.clone(),
                    TransformSpec::Orthogonal(scaled),
                )?],
            )?;
            task.loss(&a.merge()?)
        };
        let fd = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
        let rel = (fd - dd).abs() / dd.abs().max(1e-8);
        worst = worst.max(rel / 1e-5);
    }
    Ok(SuiteReport {
        suite: "initial_gradient_exactness".into(),
        trials,
        max_residual: worst,
        pass: worst <= 1.0,
        detail: "worst of: gradient-vs-projected-signal (tol 1e-10) and directional derivative vs finite differences (tol 1e-5 relative), relative to tolerance".into(),
    })
}

/// The compressed signal norm never exceeds the top-pair bound, and the
/// skew-informed support attains it whenever the pair gap is open.
pub fn signal_bound(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let mut equality_checked = 0usize;
    for _ in 0..trials {
        let d = 6 + rng.below(7);
        let w0 = Matrix::gaussian(d, d, &mut rng);
        let g = Matrix::gaussian(d, d, &mut rng);
        let signal = skew_signal(&w0, &g)?;
        let r = 2 + rng.below(d - 2);
        let p = random_support(&mut rng, r, d)?;
        let norm2 = projected_signal(&signal, &p)?.frobenius_norm().powi(2);
        let bound = signal.signal_bound(r);
        let violation = (norm2 - bound - 1e-8).max(0.0);
        worst = worst.max(violation / 1e-8);

        // Equality case under a non-degenerate gap.
        let pairs = r / 2;
        let gap_open = pairs < signal.mu.len() && signal.mu[pairs.saturating_sub(1).min(signal.mu.len() - 1)]
            - signal.mu.get(pairs).copied().unwrap_or(0.0)
            > 1e-6;
        if pairs >= 1 && gap_open {
            equality_checked += 1;
            let skew = make_support(
                &SupportRequest::new(SupportMethod::SkewGrad, r),
                &w0,
                Some(&g),
            )?;
            let attained = projected_signal(&signal, &skew)?.frobenius_norm().powi(2);
            let rel = (attained - bound).abs() / bound.max(f64::MIN_POSITIVE);
            worst = worst.max(rel / 1e-8);
        }
    }
    Ok(SuiteReport {
        suite: "signal_bound".into(),
        trials,
        max_residual: worst,
        pass: worst <= 1.0 && equality_checked > 0,
        detail: format!(
            "bound violations and skew-support equality defects relative to tolerance; equality exercised on {equality_checked} gapped instances"
        ),
    })
}

/// rho is 1 on the constructing signal and dominates every other method.
pub fn rho_maximality(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let d = 6 + rng.below(7);
        let r = 2 + rng.below(3);
        let w0 = Matrix::gaussian(d, d, &mut rng);
        let g = Matrix::gaussian(d, d, &mut rng);
        let skew = make_support(
            &SupportRequest::new(SupportMethod::SkewGrad, r),
            &w0,
            Some(&g),
        )?;
        let rho_skew = rho_score_single(&w0, &g, &skew)?;
        worst = worst.max((rho_skew - 1.0).abs() / 1e-8);
        for method in [SupportMethod::Principal, SupportMethod::GradSvd] {
            let p = make_support(&SupportRequest::new(method, r), &w0, Some(&g))?;
            let rho = rho_score_single(&w0, &g, &p)?;
            worst = worst.max((rho - rho_skew - 1e-8).max(0.0) / 1e-8);
        }
        let rand = make_support(
            &SupportRequest::new(SupportMethod::Random, r).with_seed(seed ^ trial as u64),
            &w0,
            None,
        )?;
        let rho_rand = rho_score_single(&w0, &g, &rand)?;
        worst = worst.max((rho_rand - rho_skew - 1e-8).max(0.0) / 1e-8);
    }
    Ok(SuiteReport {
        suite: "rho_maximality".into(),
        trials,
        max_residual: worst,
        pass: worst <= 1.0,
        detail: "defects of rho(skewgrad) = 1 on its own signal and rho dominance over principal/gradsvd/random, relative to 1e-8".into(),
    })
}

/// Every recovery's merged adapter matches its direct reference
/// construction.
pub fn recovery_residuals(seed: u64) -> Result<SuiteReport> {
    let mut rng = Rng::seed_from_u64(seed);
    let w0_8 = Matrix::gaussian(6, 8, &mut rng);
    let w0_sq = Matrix::gaussian(8, 8, &mut rng);
    let configs: Vec<(RecoveryConfig, &Matrix)> = vec![
        (RecoveryConfig::FullOft { seed: seed ^ 0x11 }, &w0_8),
        (
            RecoveryConfig::BlockOft {
                block_width: 2,
                seed: seed ^ 0x12,
            },
            &w0_8,
        ),
        (
            RecoveryConfig::Goft {
                rotations: vec![
                    GivensSpec { i: 0, j: 5, theta: 0.9 },
                    GivensSpec { i: 1, j: 2, theta: -0.4 },
                    GivensSpec { i: 3, j: 7, theta: 1.7 },
                ],
            },
            &w0_8,
        ),
        (
            RecoveryConfig::Boft {
                block_width: 2,
                stages: None,
                seed: seed ^ 0x13,
            },
            &w0_8,
        ),
        (
            RecoveryConfig::Hra {
                vectors: None,
                depth: Some(4),
                seed: seed ^ 0x14,
            },
            &w0_8,
        ),
        (RecoveryConfig::Psoft { r: 3, seed: seed ^ 0x15 }, &w0_sq),
    ];
    let mut worst = 0.0_f64;
    let mut all = true;
    let trials = configs.len();
    for (cfg, w0) in &configs {
        let report = verify_equivalence(cfg, w0)?;
        worst = worst.max(report.residual);
        all &= report.pass;
    }
    Ok(SuiteReport {
        suite: "recovery_residuals".into(),
        trials,
        max_residual: worst,
        pass: all && worst <= 1e-9,
        detail: "worst relative residual between merged adapters and direct reference constructions (tol 1e-9)".into(),
    })
}

/// Generic gradients leave the principal support non-invariant (the
/// necessary optimality condition fails), while constructed aligned
/// instances satisfy it with rho = 1.
pub fn principal_invariance(seed: u64, trials: usize) -> Result<SuiteReport> {
    use crate::support::psoft_optimality_check;
    let mut rng = Rng::seed_from_u64(seed);
    let mut generic_noninvariant = 0usize;
    for _ in 0..trials {
        let d = 6 + rng.below(5);
        let w0 = Matrix::gaussian(d, d, &mut rng);
        let g = Matrix::gaussian(d, d, &mut rng);
        let report = psoft_optimality_check(&w0, &g, 2)?;
        if report.f_rperp_norm > 1e-4 * report.f_norm {
            generic_noninvariant += 1;
        }
    }
    // Aligned control: largest skew pair placed inside the principal
    // subspace, second pair in the complement.
    let w0 = Matrix::gaussian(6, 6, &mut rng);
    let svd = w0.svd()?;
    let v = svd.vt.transpose();
    let mut j = Matrix::zeros(6, 6);
    j.set(0, 1, 2.0);
    j.set(1, 0, -2.0);
    j.set(3, 4, 0.5);
    j.set(4, 3, -0.5);
    let f = v.matmul(&j)?.matmul(&v.transpose())?;
    let g_aligned = w0.transpose().solve(&f)?;
    let aligned = psoft_optimality_check(&w0, &g_aligned, 2)?;
    let aligned_ok = aligned.invariance_holds && aligned.rho_is_maximal;
    let fraction = generic_noninvariant as f64 / trials as f64;
    Ok(SuiteReport {
        suite: "principal_invariance".into(),
        trials,
        max_residual: 1.0 - fraction,
        pass: fraction >= 0.95 && aligned_ok,
        detail: format!(
            "{generic_noninvariant}/{trials} generic instances non-invariant (need >= 95%); aligned control invariant: {aligned_ok}"
        ),
    })
}

/// The induced additive update of a single-factor adapter has numerical
/// rank at most the factor width, for orthogonal and free transforms.
pub fn delta_rank(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst = 0usize;
    let mut pass = true;
    for trial in 0..trials {
        let d = 6 + rng.below(11);
        let d_out = 4 + rng.below(13);
        let r = 1 + rng.below(d.min(6));
        let w0 = Matrix::gaussian(d_out, d, &mut rng);
        let support = random_support(&mut rng, r, d)?;
        let transform = if trial % 2 == 0 {
            TransformSpec::Orthogonal(SkewParam::random(r, 1.0, &mut rng))
        } else {
            let perturb = Matrix::gaussian(r, r, &mut rng).scale(0.5);
            TransformSpec::Free(Matrix::identity(r).add(&perturb)?)
        };
        let adapter = LoftAdapter::new(w0, vec![LoftFactor::new(support, transform)?])?;
        let rank = adapter.delta()?.svd()?.numerical_rank(1e-8);
        if rank > r {
            pass = false;
            worst = worst.max(rank - r);
        }
    }
    Ok(SuiteReport {
        suite: "delta_rank".into(),
        trials,
        max_residual: worst as f64,
        pass,
        detail: "worst excess of numerical rank(delta) over the factor width (must be 0)".into(),
    })
}

/// Cayley contract: orthogonality, inverse-by-negation, and the adjoint
/// against central finite differences.
pub fn cayley_contract(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let h = 1e-5;
    for trial in 0..trials {
        let r = [2, 4, 8][trial % 3];
        let e = SkewParam::random(r, 0.8, &mut rng);
        let q = cayley(&e)?;
        let ortho = q
            .transpose()
            .matmul(&q)?
            .sub(&Matrix::identity(r))?
            .frobenius_norm();
        worst = worst.max(ortho / 1e-10);
        let neg = SkewParam::from_lower(r, e.lower().iter().map(|&v| -v).collect())?;
        let inv_defect = cayley(&neg)?.sub(&q.transpose())?.frobenius_norm();
        worst = worst.max(inv_defect / 1e-10);
        let det_defect = (q.determinant()? - 1.0).abs();
        worst = worst.max(det_defect / 1e-9);

        // Adjoint vs finite differences on a linear functional of Q.
        let grad_q = Matrix::gaussian(r, r, &mut rng);
        let m = cayley_adjoint(&e, &grad_q)?;
        let mut k = 0;
        for i in 1..r {
            for j in 0..i {
                let mut hi = e.clone();
                let mut lo = e.clone();
                hi.lower_mut()[k] += h;
                lo.lower_mut()[k] -= h;
                let fd = (grad_q.frobenius_dot(&cayley(&hi)?)?
                    - grad_q.frobenius_dot(&cayley(&lo)?)?)
                    / (2.0 * h);
                let analytic = 2.0 * m.get(i, j);
                let rel = (fd - analytic).abs() / analytic.abs().max(1e-6);
                worst = worst.max(rel / 1e-5);
                k += 1;
            }
        }
    }
    Ok(SuiteReport {
        suite: "cayley_contract".into(),
        trials,
        max_residual: worst,
        pass: worst <= 1.0,
        detail: "worst of orthogonality (1e-10), inverse-by-negation (1e-10), determinant (1e-9), adjoint-vs-FD (1e-5 relative), each relative to its tolerance".into(),
    })
}
