//! Acceptance gate: every criterion at its stated tolerance and time budget, one
//! PASS/FAIL line each.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eqbayes::config::RunConfig;
use eqbayes::magnetostatics::kernel::{loop_field, loop_flux, Kernel};
use eqbayes::magnetostatics::MU_0;
use eqbayes::nested::abscissa::{ln_gaps, AbscissaPool};
use eqbayes::nested::staircase::simulate_posterior;
use eqbayes::nested::constrained::{sample_constrained_prior, ChainState, Constraint, SeedSet};
use eqbayes::nested::{run_nested, CubeLikelihood, FnLikelihood, RunOptions, RunParams, Sample};
use eqbayes::pipeline::{self, SynthOptions, REPORT_FILE, RUN_TEMPLATE_FILE};
use eqbayes::report::RunReport;
use eqbayes::synthetic::SyntheticConfig;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(budget: Duration, elapsed: Duration, detail: String) -> Outcome {
    check(elapsed <= budget, format!("{detail}; {:.2} s of {:.0} s", elapsed.as_secs_f64(), budget.as_secs_f64()))
}

/// `ψ = 2πR A_φ` and Biot–Savart `B` of a unit-current loop of radius `a` in the plane
/// `z = 0`, by the midpoint rule over `n` azimuthal nodes.
fn brute_force_loop(a: f64, r: f64, z: f64, n: usize) -> (f64, f64, f64) {
    let h = 2.0 * PI / n as f64;
    let (mut a_phi, mut bx, mut bz) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let phi = (k as f64 + 0.5) * h;
        let (s, c) = phi.sin_cos();
        // source at (a cos φ, a sin φ, 0), element a(−sin φ, cos φ, 0) dφ, field point (r, 0, z)
        let d = [r - a * c, -a * s, z];
        let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let inv3 = 1.0 / (dist * dist * dist);
        a_phi += a * c / dist;
        // (dl × d)_x = dl_y d_z − dl_z d_y ; (dl × d)_z = dl_x d_y − dl_y d_x
        bx += a * c * d[2] * inv3;
        bz += (-a * s * d[1] - a * c * d[0]) * inv3;
    }
    let pre = MU_0 / (4.0 * PI) * h;
    (2.0 * PI * r * pre * a_phi, pre * bx, pre * bz)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 20 {
        let (r, z) = (rng.random_range(0.05..3.0), rng.random_range(-2.0..2.0));
        if (r - 1.0f64).hypot(z) < 0.1 {
            continue;
        }
        n += 1;
        let (psi_ref, br_ref, bz_ref) = brute_force_loop(1.0, r, z, 1_000_000);
        let psi = loop_flux(1.0, 0.0, r, z, Kernel::Elliptic);
        let (br, bz) = loop_field(1.0, 0.0, r, z, Kernel::Elliptic);
        let mag = br_ref.hypot(bz_ref);
        worst = worst
            .max((psi - psi_ref).abs() / psi_ref.abs())
            .max((br - br_ref).abs() / mag)
            .max((bz - bz_ref).abs() / mag);
    }
    let detail = format!("worst relative error {worst:.2e} at 20 points");
    if worst > 1e-6 {
        return Err(detail);
    }
    within(Duration::from_secs(10), t.elapsed(), detail)
}

fn gaussian_2d(s: f64) -> impl Fn(&[f64]) -> f64 + Sync {
    move |u: &[f64]| {
        let r2 = (u[0] - 0.5).powi(2) + (u[1] - 0.5).powi(2);
        -r2 / (2.0 * s * s) - (2.0 * PI * s * s).ln()
    }
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let params = RunParams { size_sample_pool: 150, num_evidence_samples: 12, ..RunParams::default() };
    let options = RunOptions { posterior_samples: 1, ..RunOptions::default() };
    let mut inside = 0;
    for seed in 0..50 {
        let like = FnLikelihood::new(2, gaussian_2d(0.1));
        let run = run_nested(&like, &params, seed, &options).map_err(|e| e.to_string())?;
        let bound = 3.0 * (run.evidence.entropy / 150.0).sqrt();
        if run.evidence.log_evidence_mean.abs() <= bound {
            inside += 1;
        }
    }
    let detail = format!("{inside}/50 runs within 3√(E/m)");
    if (inside as f64) < 0.95 * 50.0 {
        return Err(detail);
    }
    within(Duration::from_secs(120), t.elapsed(), detail)
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let ln_l0 = -3.7;
    let mut worst: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for seed in [0, 1, 17, 12345] {
        let like = FnLikelihood::new(3, move |_u: &[f64]| ln_l0);
        let run = run_nested(&like, &RunParams::default(), seed, &RunOptions::default()).map_err(|e| e.to_string())?;
        let e = &run.evidence;
        for z in e.per_sequence.iter().chain([&e.log_evidence_mean]) {
            worst = worst.max((z - ln_l0).abs());
        }
        worst_h = worst_h.max(e.entropy.abs());
    }
    let detail = format!("max |ln Z − ln L₀| = {worst:.1e}, max |H| = {worst_h:.1e}");
    if worst > 1e-12 || worst_h > 1e-12 {
        return Err(detail);
    }
    within(Duration::from_secs(1), t.elapsed(), detail)
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let m = 150;
    let n = 20_000;
    let ln_t = AbscissaPool::new(m, 4, 0).take(n);
    let steps: Vec<f64> = std::iter::once(ln_t[0]).chain(ln_t.windows(2).map(|w| w[1] - w[0])).collect();
    let mean = steps.iter().sum::<f64>() / n as f64;
    let var = steps.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let target = -1.0 / m as f64;
    let detail = format!("mean {mean:.6e} vs {target:.6e}, {:.2} SE over {n} steps", (mean - target).abs() / se);
    if (mean - target).abs() > 3.0 * se {
        return Err(detail);
    }
    within(Duration::from_secs(30), t.elapsed(), detail)
}

/// Staircase over a 1D Gaussian likelihood on `[0, 1]`: each quadrature point sits where
/// the prior volume above its likelihood equals its abscissa, so the only randomness left is
/// the abscissa process (with a large pool) and the resampling itself.
fn criterion_5() -> Outcome {
    let t = Instant::now();
    let (mu, s) = (0.5, 0.05);
    let m = 50_000;
    let ln_t = AbscissaPool::new(m, 5, 0).take(12 * m);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<Vec<f64>> = ln_t
        .iter()
        .map(|lt| {
            let d = 0.5 * lt.exp();
            vec![if rng.random::<bool>() { mu + d } else { mu - d }]
        })
        .collect();
    let ln_l: Vec<f64> =
        samples.iter().map(|x| -0.5 * ((x[0] - mu) / s).powi(2) - (s * (2.0 * PI).sqrt()).ln()).collect();
    let post = simulate_posterior(samples, ln_l, &ln_gaps(&ln_t), 1800, &mut rng).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = post.resampled.iter().map(|&i| post.samples[i][0]).collect();
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let (se_mean, se_std) = (s / k.sqrt(), s / (2.0 * (k - 1.0)).sqrt());
    let (z_mean, z_std) = ((mean - mu).abs() / se_mean, (std - s).abs() / se_std);
    let detail = format!(
        "{} resamples: mean {mean:.5} ({z_mean:.2} SE), std {std:.5} ({z_std:.2} SE), ln Z {:.1e}",
        xs.len(),
        post.log_evidence
    );
    if xs.len() != 1800 || z_mean > 3.0 || z_std > 3.0 || post.log_evidence.abs() > 1e-2 {
        return Err(detail);
    }
    within(Duration::from_secs(60), t.elapsed(), detail)
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let like = FnLikelihood::new(2, gaussian_2d(0.1));
    let level = gaussian_2d(0.1)(&[0.5 + 0.2, 0.5]);
    let constraint = Constraint { log_l: level, key: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pool: Vec<Sample> = Vec::new();
    while pool.len() < 150 {
        let u = vec![rng.random::<f64>(), rng.random::<f64>()];
        let log_l = like.log_likelihood(&u);
        if constraint.admits(log_l, 1.0) {
            pool.push(Sample { u, log_l, key: rng.random() });
        }
    }
    let params = RunParams { num_abi_failures: 0, ..RunParams::default() };
    let mut state = ChainState::new(&params);
    let mut i = 0;
    while state.chains < 200 {
        let idx = i % pool.len();
        let seeds = SeedSet::from_pool(&pool, Some(idx), &[]);
        let s = sample_constrained_prior(&like, constraint, &seeds, &params, &mut state, &mut rng)
            .map_err(|e| e.to_string())?;
        pool[idx] = s;
        i += 1;
    }
    let rate = state.trailing_acceptance();
    let detail = format!("trailing acceptance {:.1}% after {} chains", 100.0 * rate, state.chains);
    if (rate - 0.234).abs() > 0.05 {
        return Err(detail);
    }
    within(Duration::from_secs(60), t.elapsed(), detail)
}

struct Paired {
    consistent: RunReport,
    perturbed: RunReport,
    consistent_bytes: Vec<u8>,
    elapsed: Duration,
}

fn infer_case(dir: &Path, perturb: bool, cache: &Path) -> Result<RunReport, String> {
    pipeline::synth(dir, &SyntheticConfig::default(), &SynthOptions { perturb, noise_seed: 7 }).map_err(|e| e.to_string())?;
    let cfg = RunConfig::load(&dir.join(RUN_TEMPLATE_FILE), &[]).map_err(|e| e.to_string())?;
    pipeline::infer(&cfg, false, Some(cache)).map_err(|e| e.to_string())
}

fn paired_runs(root: &Path) -> Result<Paired, String> {
    let t = Instant::now();
    let cache = root.join("cache");
    std::fs::create_dir_all(&cache).map_err(|e| e.to_string())?;
    let consistent = infer_case(&root.join("consistent"), false, &cache)?;
    let consistent_bytes =
        std::fs::read(root.join("consistent").join("run").join(REPORT_FILE)).map_err(|e| e.to_string())?;
    let perturbed = infer_case(&root.join("perturbed"), true, &cache)?;
    Ok(Paired { consistent, perturbed, consistent_bytes, elapsed: t.elapsed() })
}

fn criterion_7(p: &Paired) -> Outcome {
    let (c, q) = (&p.consistent.sigma_star_sq, &p.perturbed.sigma_star_sq);
    let ratio = q.mean / c.mean;
    let dj = p.consistent.relative_mean_dj;
    let detail = format!(
        "E[σ*²] {:.4e} vs {:.4e} kA² (ratio {ratio:.1}), mean ΔJ {:.2}% of peak J",
        c.mean,
        q.mean,
        100.0 * dj
    );
    if ratio < 5.0 || dj >= 0.05 {
        return Err(detail);
    }
    within(Duration::from_secs(7200), p.elapsed, detail)
}

fn criterion_8(p: &Paired) -> Outcome {
    let (c, q) = (&p.consistent.evidence, &p.perturbed.evidence);
    let gap = c.log_evidence_mean - q.log_evidence_mean;
    let combined = c.log_evidence_2sigma.hypot(q.log_evidence_2sigma);
    check(
        gap > 3.0 * combined,
        format!(
            "ln Z {:.2} ± {:.2} vs {:.2} ± {:.2}: gap {gap:.1} vs 3 × {combined:.2}",
            c.log_evidence_mean, c.log_evidence_2sigma, q.log_evidence_mean, q.log_evidence_2sigma
        ),
    )
}

fn criterion_9(root: &Path, p: &Paired) -> Outcome {
    let dir = root.join("consistent");
    let run_dir = dir.join("run");
    let tables: Vec<(String, Vec<u8>)> = std::fs::read_dir(&run_dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    let cfg = RunConfig::load(&dir.join(RUN_TEMPLATE_FILE), &[]).map_err(|e| e.to_string())?;
    pipeline::infer(&cfg, false, Some(&root.join("cache"))).map_err(|e| e.to_string())?;
    let again = std::fs::read(run_dir.join(REPORT_FILE)).map_err(|e| e.to_string())?;
    let mut differing: Vec<String> = tables
        .iter()
        .filter(|(name, bytes)| std::fs::read(run_dir.join(name)).ok().as_ref() != Some(bytes))
        .map(|(name, _)| name.clone())
        .collect();
    if again != p.consistent_bytes {
        differing.push(REPORT_FILE.into());
    }
    check(
        differing.is_empty() && !tables.is_empty(),
        format!("{} bytes of report and {} tables compared; differing: {differing:?}", again.len(), tables.len()),
    )
}

fn criterion_10() -> Outcome {
    let failed = common::run_all("      ");
    check(
        failed.is_empty(),
        format!("{} suites × {} cases, {} failed", common::SUITES.len(), common::CASES, failed.len()),
    )
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

#[test]
fn acceptance_criteria() {
    let root = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, out: Outcome| {
        match &out {
            Ok(d) => common::say(&format!("criterion {n:>2} PASS  {name}: {d}")),
            Err(d) => common::say(&format!("criterion {n:>2} FAIL  {name}: {d}")),
        }
        results.push((n, name, out));
    };
    record(1, "loop field oracle", guarded(criterion_1));
    record(2, "2D Gaussian evidence calibration", guarded(criterion_2));
    record(3, "constant likelihood exactness", guarded(criterion_3));
    record(4, "abscissa shrinkage", guarded(criterion_4));
    record(5, "simulated posterior moments", guarded(criterion_5));
    record(6, "adaptive chain acceptance", guarded(criterion_6));
    match guarded(|| paired_runs(root.path())) {
        Ok(p) => {
            record(7, "force-balance round trip", guarded(|| criterion_7(&p)));
            record(8, "evidence ordering", guarded(|| criterion_8(&p)));
            record(9, "deterministic reports", guarded(|| criterion_9(root.path(), &p)));
        }
        Err(e) => {
            for (n, name) in [(7, "force-balance round trip"), (8, "evidence ordering"), (9, "deterministic reports")] {
                record(n, name, Err(format!("paired inference failed: {e}")));
            }
        }
    }
    record(10, "property suites", guarded(criterion_10));
    let failed: Vec<usize> = results.iter().filter(|(_, _, o)| o.is_err()).map(|(n, _, _)| *n).collect();
    common::say(&format!("{} of {} criteria passed", results.len() - failed.len(), results.len()));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
