//! Location of posterior maxima for seeding: particle swarm, then Hooke–Jeeves pattern
//! search from the best distinct particles, then an optional conjugate-gradient polish.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CubeLikelihood, Sample};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedBudget {
    pub swarm_size: usize,
    pub swarm_iterations: usize,
    /// Hooke–Jeeves runs, started from the best distinct personal bests
    pub polish_starts: usize,
    /// minimum unit-cube distance between two polish starts
    pub start_separation: f64,
    pub hj_initial_step: f64,
    pub hj_min_step: f64,
    pub hj_max_evaluations: usize,
    pub conjugate_gradient: bool,
    pub cg_iterations: usize,
}

impl Default for SeedBudget {
    fn default() -> Self {
        SeedBudget {
            swarm_size: 24,
            swarm_iterations: 60,
            polish_starts: 3,
            start_separation: 0.05,
            hj_initial_step: 0.05,
            hj_min_step: 1e-7,
            hj_max_evaluations: 40_000,
            conjugate_gradient: true,
            cg_iterations: 300,
        }
    }
}

/// Distance below which two maxima in unit-cube coordinates are the same.
pub const DEDUP_DISTANCE: f64 = 1e-6;

fn eval_many<L: CubeLikelihood + ?Sized>(like: &L, points: &[Vec<f64>]) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        points.par_iter().map(|p| like.log_likelihood(p)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        points.iter().map(|p| like.log_likelihood(p)).collect()
    }
}

fn better(a: f64, b: f64) -> bool {
    a > b || (b.is_nan() && !a.is_nan())
}

/// Returns personal bests sorted best first.
pub fn particle_swarm<L: CubeLikelihood + ?Sized>(
    like: &L,
    budget: &SeedBudget,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<f64>, f64)> {
    let dim = like.dim();
    let n = budget.swarm_size.max(2);
    let (w, c1, c2, vmax) = (0.72, 1.49, 1.49, 0.2);
    let mut x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect()).collect();
    let mut fx = eval_many(like, &x);
    let mut best_x = x.clone();
    let mut best_f = fx.clone();
    let mut g = (0..n).fold(0, |g, i| if better(best_f[i], best_f[g]) { i } else { g });
    for _ in 0..budget.swarm_iterations {
        let gx = best_x[g].clone();
        for i in 0..n {
            for d in 0..dim {
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let vel = w * v[i][d] + c1 * r1 * (best_x[i][d] - x[i][d]) + c2 * r2 * (gx[d] - x[i][d]);
                v[i][d] = vel.clamp(-vmax, vmax);
                x[i][d] = (x[i][d] + v[i][d]).clamp(0.0, 1.0);
            }
        }
        fx = eval_many(like, &x);
        for i in 0..n {
            if better(fx[i], best_f[i]) {
                best_f[i] = fx[i];
                best_x[i].clone_from(&x[i]);
            }
        }
        g = (0..n).fold(g, |g, i| if better(best_f[i], best_f[g]) { i } else { g });
    }
    let mut out: Vec<(Vec<f64>, f64)> = best_x.into_iter().zip(best_f).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

struct Counted<'a, L: ?Sized> {
    like: &'a L,
    evals: usize,
}

impl<L: CubeLikelihood + ?Sized> Counted<'_, L> {
    fn f(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return f64::NEG_INFINITY;
        }
        self.like.log_likelihood(x)
    }
}

fn explore<L: CubeLikelihood + ?Sized>(c: &mut Counted<'_, L>, base: &[f64], fbase: f64, step: f64) -> (Vec<f64>, f64) {
    let mut x = base.to_vec();
    let mut fx = fbase;
    for d in 0..x.len() {
        let orig = x[d];
        x[d] = orig + step;
        let up = c.f(&x);
        if better(up, fx) {
            fx = up;
            continue;
        }
        x[d] = orig - step;
        let down = c.f(&x);
        if better(down, fx) {
            fx = down;
            continue;
        }
        x[d] = orig;
    }
    (x, fx)
}

/// Pattern search maximizing `like` from `start`; returns the point, its value and the
/// final step.
pub fn hooke_jeeves<L: CubeLikelihood + ?Sized>(
    like: &L,
    start: &[f64],
    budget: &SeedBudget,
) -> (Vec<f64>, f64, f64) {
    let mut c = Counted { like, evals: 0 };
    let mut base = start.to_vec();
    let mut fbase = c.f(&base);
    let mut step = budget.hj_initial_step;
    while step >= budget.hj_min_step && c.evals < budget.hj_max_evaluations {
        let (x, fx) = explore(&mut c, &base, fbase, step);
        if !better(fx, fbase) {
            step *= 0.5;
            continue;
        }
        // pattern moves while they keep paying off
        let (mut prev, mut cur, mut fcur) = (base, x, fx);
        loop {
            let pattern: Vec<f64> = cur.iter().zip(&prev).map(|(a, b)| (2.0 * a - b).clamp(0.0, 1.0)).collect();
            let fp = c.f(&pattern);
            let (y, fy) = explore(&mut c, &pattern, fp, step);
            if better(fy, fcur) && c.evals < budget.hj_max_evaluations {
                prev = std::mem::replace(&mut cur, y);
                fcur = fy;
            } else {
                break;
            }
        }
        base = cur;
        fbase = fcur;
    }
    (base, fbase, step)
}

fn fd_gradient<L: CubeLikelihood + ?Sized>(c: &mut Counted<'_, L>, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|d| {
            let lo = (x[d] - h).max(0.0);
            let hi = (x[d] + h).min(1.0);
            probe[d] = hi;
            let fh = c.f(&probe);
            probe[d] = lo;
            let fl = c.f(&probe);
            probe[d] = x[d];
            let g = (fh - fl) / (hi - lo);
            if g.is_finite() {
                g
            } else {
                0.0
            }
        })
        .collect()
}

/// Polak–Ribière conjugate gradient ascent with central-difference gradients and a
/// backtracking line search kept inside the unit cube.
pub fn conjugate_gradient<L: CubeLikelihood + ?Sized>(like: &L, start: &[f64], iterations: usize) -> (Vec<f64>, f64) {
    let mut c = Counted { like, evals: 0 };
    let h = 1e-6;
    let mut x = start.to_vec();
    let mut fx = c.f(&x);
    let mut g = fd_gradient(&mut c, &x, h);
    let mut dir = g.clone();
    for _ in 0..iterations {
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        let (t, fy) = line_max(&mut c, &x, fx, &dir, 0.01 / norm);
        if !better(fy, fx) || t == 0.0 {
            break;
        }
        x = x.iter().zip(&dir).map(|(a, d)| (a + t * d).clamp(0.0, 1.0)).collect();
        fx = fy;
        let g_new = fd_gradient(&mut c, &x, h);
        let num: f64 = g_new.iter().zip(&g).map(|(a, b)| a * (a - b)).sum();
        let den: f64 = g.iter().map(|v| v * v).sum();
        let beta = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
        dir = g_new.iter().zip(&dir).map(|(a, d)| a + beta * d).collect();
        g = g_new;
    }
    (x, fx)
}

/// Maximizes `f(x + t·dir)` over `t ≥ 0` by doubling from `t0`, then golden-section search.
fn line_max<L: CubeLikelihood + ?Sized>(c: &mut Counted<'_, L>, x: &[f64], fx: f64, dir: &[f64], t0: f64) -> (f64, f64) {
    let mut at = |t: f64| {
        let y: Vec<f64> = x.iter().zip(dir).map(|(a, d)| (a + t * d).clamp(0.0, 1.0)).collect();
        c.f(&y)
    };
    let (mut lo, mut hi) = (0.0, t0);
    let mut fprev = fx;
    for _ in 0..60 {
        let f = at(hi);
        if !better(f, fprev) {
            break;
        }
        fprev = f;
        lo = hi / 2.0;
        hi *= 2.0;
    }
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (if lo > 0.0 { lo / 2.0 } else { 0.0 }, hi);
    let mut p = b - ratio * (b - a);
    let mut q = a + ratio * (b - a);
    let (mut fp, mut fq) = (at(p), at(q));
    for _ in 0..60 {
        if better(fp, fq) {
            b = q;
            q = p;
            fq = fp;
            p = b - ratio * (b - a);
            fp = at(p);
        } else {
            a = p;
            p = q;
            fp = fq;
            q = a + ratio * (b - a);
            fq = at(q);
        }
    }
    let (t, f) = if better(fp, fq) { (p, fp) } else { (q, fq) };
    if better(f, fx) { (t, f) } else { (0.0, fx) }
}

/// True when some coordinate neighbour at `step` is worse; rules out flat regions. The
/// pattern search may stop on its evaluation budget, so better neighbours are allowed.
fn is_peaked<L: CubeLikelihood + ?Sized>(like: &L, x: &[f64], fx: f64, step: f64) -> bool {
    if !fx.is_finite() {
        return false;
    }
    let tol = 1e-12 * fx.abs().max(1.0);
    let mut probe = x.to_vec();
    for d in 0..x.len() {
        for s in [step, -step] {
            probe[d] = x[d] + s;
            let f = if (0.0..=1.0).contains(&probe[d]) { like.log_likelihood(&probe) } else { f64::NEG_INFINITY };
            if f < fx - tol {
                return true;
            }
        }
        probe[d] = x[d];
    }
    false
}

/// Distinct local maxima, best first. Keys come from `Stream::TieKeys`.
/// Starts from `extra` are polished in addition to the swarm's best.
pub fn find_seeds<L: CubeLikelihood + ?Sized>(
    like: &L,
    budget: &SeedBudget,
    extra: &[Vec<f64>],
    seed: u64,
) -> Vec<Sample> {
    let mut rng = rng::child(seed, Stream::Swarm);
    let mut keys = rng::child(seed, Stream::TieKeys);
    let swarm = particle_swarm(like, budget, &mut rng);
    let mut starts: Vec<&Vec<f64>> = Vec::new();
    for (x, f) in &swarm {
        if starts.len() >= budget.polish_starts {
            break;
        }
        if f.is_finite() && starts.iter().all(|s| distance(s, x) > budget.start_separation) {
            starts.push(x);
        }
    }
    starts.extend(extra.iter().filter(|s| s.len() == like.dim()));
    let mut maxima: Vec<Sample> = Vec::new();
    for s in starts {
        let (mut x, mut fx, mut step) = hooke_jeeves(like, s, budget);
        if budget.conjugate_gradient {
            let (y, fy) = conjugate_gradient(like, &x, budget.cg_iterations);
            // a finer pattern search cleans up after the line searches
            let fine = SeedBudget { hj_initial_step: 0.1 * budget.hj_initial_step, ..budget.clone() };
            let (z, fz, st) = hooke_jeeves(like, &y, &fine);
            debug_assert!(!better(fy, fz));
            if !better(fx, fz) {
                x = z;
                fx = fz;
                step = st;
            }
        }
        let probe = step.max(1e-5);
        if !is_peaked(like, &x, fx, probe) {
            continue;
        }
        if maxima.iter().any(|m| distance(&m.u, &x) < DEDUP_DISTANCE) {
            continue;
        }
        maxima.push(Sample { u: x, log_l: fx, key: keys.random() });
    }
    maxima.sort_by(|a, b| b.log_l.total_cmp(&a.log_l));
    log::info!("seeding found {} maxima", maxima.len());
    maxima
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
