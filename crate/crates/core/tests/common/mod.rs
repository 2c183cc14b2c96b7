//! Invariant suites shared by the property target and the acceptance gate. Each suite
//! runs `CASES` generated cases through a proptest runner.

#![allow(dead_code)]

use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use eqbayes::config::apply_override;
use eqbayes::contour::{marching_squares, Lattice};
use eqbayes::diagnostics::{predict_mse, weak_log_likelihood, Channel, ChannelKind, PredictionPair, WeakObsWeights};
use eqbayes::inference::{LogValue, Posterior};
use eqbayes::logspace::{log_add_exp, log_sum_exp};
use eqbayes::magnetostatics::kernel::{loop_field, loop_flux, Kernel};
use eqbayes::magnetostatics::{build_response, Beam, BeamGrid, BeamRole, FieldPoint, Quantity, QuadSettings};
use eqbayes::nested::abscissa::{ln_gaps, AbscissaPool};
use eqbayes::nested::constrained::Constraint;
use eqbayes::nested::staircase::posterior_weights;
use eqbayes::profiles::{
    current_discrepancy, eval_f, eval_fprime, eval_pprime, eval_pressure, gs_point, CurrentDensityField, GridKind,
    NestedGrids, ProfileCoeffs,
};
use eqbayes::synthetic::{build_machine, generate_gs_truth, suggested_bounds, synthesize_data, ChannelLayout, SyntheticConfig};

pub const CASES: u32 = 1000;

pub type Suite = (&'static str, fn() -> Result<(), String>);

pub const SUITES: &[Suite] = &[
    ("response operators are linear", response_linearity),
    ("loop flux is reciprocal", loop_reciprocity),
    ("elliptic and azimuthal kernels agree", kernel_agreement),
    ("loop fields respect midplane reflection", loop_reflection),
    ("pressure vanishes on the boundary", pressure_boundary),
    ("pressure derivative matches finite differences", pressure_fd),
    ("f derivative matches finite differences", f_fd),
    ("force-balance current vanishes outside the boundary", gs_outside),
    ("current discrepancy is non-negative and bounded below", delta_i_bounds),
    ("current discrepancy vanishes on matching fields", delta_i_zero),
    ("weak likelihood is symmetric under model swap", weak_symmetry),
    ("weak likelihood decreases with the residual", weak_monotone),
    ("MSE ratio is scale invariant", mse_homogeneity),
    ("prior transform stays in its support", prior_support),
    ("prior Jacobian matches finite differences", prior_jacobian),
    ("cube likelihood is pure and rejects outside the cube", cube_purity),
    ("abscissa sequences strictly decrease", abscissa_decreasing),
    ("posterior weights are a distribution", weights_distribution),
    ("log-sum-exp is shift covariant", lse_shift),
    ("likelihood constraint is a strict order", constraint_order),
    ("circular level sets are closed with the right area", contour_circle),
    ("config overrides round-trip", override_round_trip),
];

pub fn runner() -> TestRunner {
    TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() })
}

pub fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

/// Writes past the test harness capture so the line shows in every run.
pub fn say(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr(), "{line}");
}

/// Runs every suite, printing one line each; returns the names of failed suites.
pub fn run_all(prefix: &str) -> Vec<&'static str> {
    let mut failed = Vec::new();
    for (name, suite) in SUITES {
        match suite() {
            Ok(()) => say(&format!("{prefix}PASS {name} ({CASES} cases)")),
            Err(e) => {
                say(&format!("{prefix}FAIL {name}: {e}"));
                failed.push(*name);
            }
        }
    }
    failed
}

pub fn rel_close(a: f64, b: f64, tol: f64, scale: f64) -> bool {
    (a - b).abs() <= tol * scale.max(f64::MIN_POSITIVE)
}

pub fn response_linearity() -> Result<(), String> {
    let beams = BeamGrid::rectangular((0.4, 1.2), (-0.5, 0.5), 3, 3, BeamRole::Plasma).unwrap().beams;
    let pts: Vec<FieldPoint> =
        [(1.6, 0.2), (0.2, -0.8), (1.0, 0.9), (0.9, 0.1)].iter().map(|&(r, z)| FieldPoint::new(r, z)).collect();
    let ops: Vec<_> = [Quantity::Psi, Quantity::BR, Quantity::BZ]
        .iter()
        .map(|&q| build_response(&beams, &pts, q, &QuadSettings::default()).unwrap())
        .collect();
    let currents = prop::collection::vec(-1e5..1e5f64, 9);
    run((currents.clone(), currents), |(i, a)| {
        let sum: Vec<f64> = i.iter().zip(&a).map(|(x, y)| x + y).collect();
        let abs: Vec<f64> = i.iter().zip(&a).map(|(x, y)| x.abs() + y.abs()).collect();
        for op in &ops {
            let (gs, gi, ga) = (op.apply(&sum), op.apply(&i), op.apply(&a));
            let mag: Vec<f64> = op.matrix.rows().into_iter().map(|row| row.iter().zip(&abs).map(|(g, c)| g.abs() * c).sum()).collect();
            for k in 0..gs.len() {
                prop_assert!(rel_close(gs[k], gi[k] + ga[k], 1e-13, mag[k]), "row {k}: {} vs {}", gs[k], gi[k] + ga[k]);
            }
        }
        Ok(())
    })
}

pub fn loop_reciprocity() -> Result<(), String> {
    let s = (0.1..3.0f64, -2.0..2.0f64, 0.1..3.0f64, -2.0..2.0f64)
        .prop_filter("separated", |(a, za, r, z)| (a - r).hypot(za - z) > 1e-2);
    run(s, |(a, za, r, z)| {
        let m1 = loop_flux(a, za, r, z, Kernel::Elliptic);
        let m2 = loop_flux(r, z, a, za, Kernel::Elliptic);
        prop_assert!(m1 > 0.0);
        prop_assert!(rel_close(m1, m2, 1e-10, m1), "{m1} vs {m2}");
        Ok(())
    })
}

pub fn kernel_agreement() -> Result<(), String> {
    let az = Kernel::Azimuthal { nodes: 4000 };
    let s = (0.3..2.0f64, -1.0..1.0f64, 0.05..3.0f64, -1.5..1.5f64)
        .prop_filter("one beam width away", |(a, za, r, z)| (a - r).hypot(za - z) >= 0.1);
    run(s, |(a, za, r, z)| {
        let (e, q) = (loop_flux(a, za, r, z, Kernel::Elliptic), loop_flux(a, za, r, z, az));
        prop_assert!(rel_close(e, q, 1e-8, e), "psi {e} vs {q}");
        let (ebr, ebz) = loop_field(a, za, r, z, Kernel::Elliptic);
        let (qbr, qbz) = loop_field(a, za, r, z, az);
        let mag = ebr.hypot(ebz);
        prop_assert!(rel_close(ebr, qbr, 1e-8, mag), "B_R {ebr} vs {qbr}");
        prop_assert!(rel_close(ebz, qbz, 1e-8, mag), "B_Z {ebz} vs {qbz}");
        Ok(())
    })
}

pub fn loop_reflection() -> Result<(), String> {
    let s = (0.1..3.0f64, -2.0..2.0f64, 0.01..3.0f64, -2.0..2.0f64)
        .prop_filter("separated", |(a, za, r, z)| (a - r).hypot(za - z) > 1e-2);
    run(s, |(a, za, r, z)| {
        let psi = loop_flux(a, za, r, z, Kernel::Elliptic);
        prop_assert!(rel_close(psi, loop_flux(a, -za, r, -z, Kernel::Elliptic), 1e-14, psi));
        let (br, bz) = loop_field(a, za, r, z, Kernel::Elliptic);
        let (br2, bz2) = loop_field(a, -za, r, -z, Kernel::Elliptic);
        let mag = br.hypot(bz);
        prop_assert!(rel_close(br, -br2, 1e-14, mag));
        prop_assert!(rel_close(bz, bz2, 1e-14, mag));
        Ok(())
    })
}

pub fn coeffs() -> impl Strategy<Value = ProfileCoeffs> {
    (prop::array::uniform4(-1e4..1e4f64), prop::array::uniform3(-1e5..1e5f64), 1e5..1e7f64)
        .prop_map(|(p, f, fb)| ProfileCoeffs::new(p, f, fb))
}

pub fn pressure_boundary() -> Result<(), String> {
    run((coeffs(), -2.0..2.0f64), |(c, psi_gamma)| {
        prop_assert_eq!(eval_pressure(&c, psi_gamma, psi_gamma), 0.0);
        prop_assert_eq!(eval_f(&c, psi_gamma, psi_gamma), c.f_boundary);
        Ok(())
    })
}

/// For a polynomial of degree ≤ 4 the central difference equals the derivative plus
/// `h²/6` times the third derivative, up to rounding.
pub fn pressure_fd() -> Result<(), String> {
    run((coeffs(), -1.0..1.0f64, -1.0..1.0f64, 1e-3..1e-1f64), |(c, psi_gamma, psi, h)| {
        let fd = (eval_pressure(&c, psi_gamma, psi + h) - eval_pressure(&c, psi_gamma, psi - h)) / (2.0 * h);
        let third = 2.0 * c.p_c[2] + 6.0 * c.p_c[3] * psi;
        let exact = eval_pprime(&c, psi);
        let scale: f64 = c.p_c.iter().map(|v| v.abs()).sum::<f64>() * 4.0;
        let err = fd - exact - h * h / 6.0 * third;
        prop_assert!(err.abs() <= 1e-12 * scale / h, "err {err}");
        Ok(())
    })
}

pub fn f_fd() -> Result<(), String> {
    run((coeffs(), -1.0..1.0f64, -1.0..1.0f64, 1e-3..1e-1f64), |(c, psi_gamma, psi, h)| {
        let fd = (eval_f(&c, psi_gamma, psi + h) - eval_f(&c, psi_gamma, psi - h)) / (2.0 * h);
        let exact = eval_fprime(&c, psi);
        let err = fd - exact - h * h * c.f_c[2];
        let scale = c.f_boundary + c.f_c.iter().map(|v| v.abs()).sum::<f64>() * 8.0;
        prop_assert!(err.abs() <= 1e-14 * scale / h, "err {err}");
        Ok(())
    })
}

pub fn gs_outside() -> Result<(), String> {
    run((coeffs(), -1.0..1.0f64, 1e-9..1.0f64, 0.1..2.0f64), |(c, psi_gamma, below, r)| {
        prop_assert_eq!(gs_point(&c, psi_gamma, psi_gamma - below, r), 0.0);
        prop_assert!(gs_point(&c, psi_gamma, psi_gamma + below, r).is_finite());
        Ok(())
    })
}

pub fn small_grids() -> NestedGrids {
    let beams = BeamGrid::rectangular((0.4, 1.0), (-0.4, 0.4), 3, 3, BeamRole::Plasma).unwrap().beams;
    NestedGrids::refined(beams, 2)
}

pub fn delta_i_bounds() -> Result<(), String> {
    let grids = small_grids();
    let s = (prop::collection::vec(-1e6..1e6f64, 9), prop::collection::vec(-1e6..1e6f64, 36));
    run(s, |(j, gs)| {
        let jf = CurrentDensityField { grid: GridKind::Inference, values: j.clone() };
        let gf = CurrentDensityField { grid: GridKind::Dense, values: gs.clone() };
        let (di, dj) = current_discrepancy(&jf, &gf, &grids);
        for (i, b) in grids.inference.iter().enumerate() {
            prop_assert!(di[i] >= 0.0);
            prop_assert!(rel_close(dj.values[i], di[i] / b.area(), 1e-14, dj.values[i].abs()));
            // |∫(J − J_GS)| ≤ ∫|J − J_GS|
            let net: f64 = grids
                .dense
                .iter()
                .zip(&grids.parent)
                .zip(&gs)
                .filter(|((_, &p), _)| p == i)
                .map(|((d, _), g)| (j[i] - g) * d.area())
                .sum();
            prop_assert!(net.abs() <= di[i] * (1.0 + 1e-12) + 1e-9);
        }
        Ok(())
    })
}

pub fn delta_i_zero() -> Result<(), String> {
    let grids = small_grids();
    run(prop::collection::vec(-1e6..1e6f64, 9), |j| {
        let jf = CurrentDensityField { grid: GridKind::Inference, values: j.clone() };
        let gs: Vec<f64> = grids.parent.iter().map(|&p| j[p]).collect();
        let gf = CurrentDensityField { grid: GridKind::Dense, values: gs };
        let (di, dj) = current_discrepancy(&jf, &gf, &grids);
        prop_assert!(di.iter().chain(&dj.values).all(|v| *v == 0.0));
        Ok(())
    })
}

pub fn channel(x: f64, sigma: f64) -> Channel {
    Channel {
        name: "c".into(),
        kind: ChannelKind::Fluxloop,
        position: FieldPoint::new(1.5, 0.0),
        theta: None,
        mse_geometry: None,
        observation: x,
        uncertainty: sigma,
        bias_index: None,
        weights: None,
    }
}

pub fn weak_symmetry() -> Result<(), String> {
    let s = (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64, 1e-3..10.0f64, 0.0..=1.0f64, prop::option::of(1e-3..10.0f64));
    run(s, |(direct, gs, x, sigma, a, st)| {
        let chan = channel(x, sigma);
        let w = WeakObsWeights { a_tilde: a, b_tilde: 1.0 - a, sigma_tilde: st };
        let swapped = WeakObsWeights { a_tilde: 1.0 - a, b_tilde: a, sigma_tilde: st };
        let l1 = weak_log_likelihood(PredictionPair { direct, gs }, &chan, &w);
        let l2 = weak_log_likelihood(PredictionPair { direct: gs, gs: direct }, &chan, &swapped);
        prop_assert!(rel_close(l1, l2, 1e-12, l1.abs().max(1.0)), "{l1} vs {l2}");
        Ok(())
    })
}

pub fn weak_monotone() -> Result<(), String> {
    let s = (-10.0..10.0f64, 0.0..5.0f64, 1e-3..5.0f64, 1e-3..10.0f64, 0.0..=1.0f64, prop::option::of(1e-3..10.0f64));
    run(s, |(direct, r, extra, sigma, a, st)| {
        let gs = direct;
        let w = WeakObsWeights { a_tilde: a, b_tilde: 1.0 - a, sigma_tilde: st };
        let pair = PredictionPair { direct, gs };
        let near = weak_log_likelihood(pair, &channel(direct + r, sigma), &w);
        let far = weak_log_likelihood(pair, &channel(direct + r + extra, sigma), &w);
        prop_assert!(far < near, "{far} !< {near}");
        Ok(())
    })
}

pub fn mse_homogeneity() -> Result<(), String> {
    let s = (prop::array::uniform6(-1.0..1.0f64), prop::array::uniform3(-2.0..2.0f64), 1e-3..1e3f64);
    let s = s.prop_filter("non-degenerate", |(a, b, _)| (a[3] * b[1] + a[4] * b[0] + a[5] * b[2]).abs() > 1e-3);
    run(s, |(a, b, lambda)| {
        let base = predict_mse(b[0], b[1], b[2], &a).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let scaled = predict_mse(lambda * b[0], lambda * b[1], lambda * b[2], &a);
        let scaled = scaled.map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(rel_close(base, scaled, 1e-12, base.abs().max(1.0)), "{base} vs {scaled}");
        Ok(())
    })
}

/// A desk-size machine small enough to evaluate thousands of times in a test.
pub fn small_posterior() -> &'static Posterior {
    static POST: OnceLock<Posterior> = OnceLock::new();
    POST.get_or_init(|| {
        let cfg = small_config();
        let sm = build_machine(&cfg).unwrap();
        let truth = generate_gs_truth(&sm, &cfg).unwrap();
        let bounds = suggested_bounds(&truth, cfg.target_current);
        let data = synthesize_data(&sm, &truth, 3);
        Posterior::assemble(&sm.machine, data, &bounds).unwrap()
    })
}

pub fn small_config() -> SyntheticConfig {
    SyntheticConfig {
        nr: 4,
        nz: 6,
        channels: ChannelLayout { pickups: 16, flux_loops: 8, mse: 6, ..ChannelLayout::default() },
        ..SyntheticConfig::default()
    }
}

pub fn unit_point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, dim)
}

pub fn prior_support() -> Result<(), String> {
    let space = &small_posterior().space;
    run(unit_point(space.dim()), |u| {
        let x = space.from_unit(&u);
        prop_assert!(space.contains(&x));
        for (a, b) in space.to_unit(&x).iter().zip(&u) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
        let state = space.from_vector(&x);
        prop_assert_eq!(space.to_vector(&state), x);
        Ok(())
    })
}

pub fn prior_jacobian() -> Result<(), String> {
    let space = &small_posterior().space;
    let dim = space.dim();
    run((0..dim, 0.01..0.99f64), |(k, u)| {
        let p = &space.params[k];
        let h = 1e-5;
        let fd = (p.from_unit(u + h) - p.from_unit(u - h)) / (2.0 * h);
        let x = p.from_unit(u);
        prop_assert!(rel_close(p.ln_jacobian(x), fd.ln(), 1e-6, 1.0), "{}: {} vs {}", p.name, p.ln_jacobian(x), fd.ln());
        Ok(())
    })
}

pub fn cube_purity() -> Result<(), String> {
    let post = small_posterior();
    let dim = post.dim();
    let outside = (0..dim, prop_oneof![-1.0..-1e-9f64, (1.0 + 1e-9)..2.0f64]);
    run((unit_point(dim), outside), |(u, (k, bad))| {
        let a = post.cube_log_likelihood(&u);
        let b = post.cube_log_likelihood(&u);
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!(!a.is_nan());
        let x = post.space.from_unit(&u);
        let s = post.space.from_vector(&x);
        match post.log_posterior(&s) {
            LogValue::Finite(v) => prop_assert!(rel_close(a, v + post.space.ln_jacobian(&x), 1e-12, v.abs().max(1.0))),
            LogValue::Rejected(_) => prop_assert_eq!(a, f64::NEG_INFINITY),
        }
        let mut v = u.clone();
        v[k] = bad;
        prop_assert_eq!(post.cube_log_likelihood(&v), f64::NEG_INFINITY);
        Ok(())
    })
}

pub fn abscissa_decreasing() -> Result<(), String> {
    run((1usize..300, any::<u64>(), 0u32..64), |(m, seed, seq)| {
        let ln_t = AbscissaPool::new(m, seed, seq).take(200);
        prop_assert!(ln_t[0] < 0.0);
        prop_assert!(ln_t.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(ln_gaps(&ln_t).iter().all(|g| g.is_finite()));
        prop_assert_eq!(AbscissaPool::new(m, seed, seq).take(200), ln_t);
        Ok(())
    })
}

pub fn weights_distribution() -> Result<(), String> {
    run(prop::collection::vec(-800.0..800.0f64, 1..400), |terms| {
        let z = log_sum_exp(&terms);
        let w = posterior_weights(&terms, z).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(w.iter().all(|p| *p >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        Ok(())
    })
}

pub fn lse_shift() -> Result<(), String> {
    run((prop::collection::vec(-700.0..700.0f64, 1..100), -700.0..700.0f64), |(v, c)| {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let (a, b) = (log_sum_exp(&v) + c, log_sum_exp(&shifted));
        prop_assert!(rel_close(a, b, 1e-12, a.abs().max(1.0)), "{a} vs {b}");
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(log_sum_exp(&v) >= max && log_sum_exp(&v) <= max + (v.len() as f64).ln() + 1e-12);
        let pair = log_add_exp(v[0], c);
        prop_assert!(rel_close(pair, log_sum_exp(&[v[0], c]), 1e-14, pair.abs().max(1.0)));
        Ok(())
    })
}

pub fn constraint_order() -> Result<(), String> {
    let level = prop_oneof![Just(0.0), Just(1.0), -5.0..5.0f64];
    run((level.clone(), 0.0..1.0f64, level, 0.0..1.0f64), |(la, ka, lb, kb)| {
        let a = Constraint { log_l: la, key: ka };
        let b = Constraint { log_l: lb, key: kb };
        prop_assert!(!a.admits(la, ka));
        if (la, ka) != (lb, kb) {
            prop_assert!(a.admits(lb, kb) != b.admits(la, ka));
        }
        Ok(())
    })
}

pub fn contour_circle() -> Result<(), String> {
    let n = 81;
    let axis: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let beams: Vec<Beam> = axis
        .iter()
        .flat_map(|&z| axis.iter().map(move |&r| Beam { r_center: 1.0 + r, z_center: z - 0.5, width: 0.0125, height: 0.0125 }))
        .collect();
    let lat = Lattice::from_beams(&beams).unwrap();
    run((1.3..1.7f64, -0.2..0.2f64, 0.1..0.25f64), |(r0, z0, rho)| {
        let nodes: Vec<f64> = beams.iter().map(|b| -((b.r_center - r0).powi(2) + (b.z_center - z0).powi(2))).collect();
        let curves = marching_squares(&lat, &lat.nodes(&nodes), -rho * rho);
        prop_assert_eq!(curves.len(), 1);
        let c = &curves[0];
        prop_assert!(c.closed);
        let area = c.area().abs();
        let exact = std::f64::consts::PI * rho * rho;
        prop_assert!((area - exact).abs() < 0.02 * exact, "area {area} vs {exact}");
        for &(r, z) in &c.points {
            prop_assert!(((r - r0).hypot(z - z0) - rho).abs() < 0.025);
        }
        Ok(())
    })
}

pub fn override_round_trip() -> Result<(), String> {
    let key = prop::collection::vec("[a-z]{1,6}", 1..4).prop_map(|v| v.join("."));
    run((key, any::<i64>()), |(key, value)| {
        let mut doc = serde_json::json!({"existing": {"x": 1}});
        apply_override(&mut doc, &format!("{key}={value}")).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let pointer = format!("/{}", key.replace('.', "/"));
        prop_assert_eq!(doc.pointer(&pointer), Some(&serde_json::json!(value)));
        Ok(())
    })
}
