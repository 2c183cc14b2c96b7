//! Prior sampling under a likelihood constraint: ab initio draws, then adaptive MCMC
//! chains started from the seed set.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CubeLikelihood, RunParams, Sample};
use crate::error::{Error, Result};

/// Lexicographic likelihood floor `(L, key)`; ties in `L` are broken by the random key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(with = "crate::io::neg_inf")]
    pub log_l: f64,
    pub key: f64,
}

impl Constraint {
    pub const NONE: Constraint = Constraint { log_l: f64::NEG_INFINITY, key: f64::NEG_INFINITY };

    pub fn of(s: &Sample) -> Self {
        Constraint { log_l: s.log_l, key: s.key }
    }

    #[inline]
    pub fn admits(&self, log_l: f64, key: f64) -> bool {
        log_l > self.log_l || (log_l == self.log_l && key > self.key)
    }
}

/// Chain starting points: the live pool plus externally located maxima.
#[derive(Debug, Clone)]
pub struct SeedSet<'a> {
    pub members: Vec<&'a Sample>,
    /// side lengths of the smallest box around the members, per dimension
    pub sides: Vec<f64>,
}

/// Side length used for dimensions where all seeds coincide.
const MIN_SIDE: f64 = 1e-6;

impl<'a> SeedSet<'a> {
    pub fn new(members: Vec<&'a Sample>) -> Self {
        let dim = members.first().map_or(0, |s| s.u.len());
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for s in &members {
            for (d, &v) in s.u.iter().enumerate() {
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        let sides = lo.iter().zip(&hi).map(|(l, h)| (h - l).max(MIN_SIDE)).collect();
        SeedSet { members, sides }
    }

    /// Pool members except `exclude`, plus the maxima.
    pub fn from_pool(pool: &'a [Sample], exclude: Option<usize>, maxima: &'a [Sample]) -> Self {
        let members = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(_, s)| s)
            .chain(maxima)
            .collect();
        Self::new(members)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Drops maxima that no longer satisfy the constraint.
pub fn evict_seeds(maxima: &mut Vec<Sample>, constraint: Constraint) {
    maxima.retain(|s| constraint.admits(s.log_l, s.key));
}

/// Adaptive state carried between calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub ab_initio: bool,
    pub consecutive_failures: usize,
    pub ln_scale: f64,
    pub chains: u64,
    pub discarded: u64,
    pub accepted: u64,
    pub attempted: u64,
    /// acceptance rates of the most recent chains, oldest first
    pub recent: Vec<f64>,
}

const RECENT_WINDOW: usize = 50;

impl ChainState {
    pub fn new(params: &RunParams) -> Self {
        ChainState {
            ab_initio: params.num_abi_failures > 0,
            consecutive_failures: 0,
            ln_scale: 0.0,
            chains: 0,
            discarded: 0,
            accepted: 0,
            attempted: 0,
            recent: Vec::new(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.ln_scale.exp()
    }

    /// Mean acceptance over the trailing window.
    pub fn trailing_acceptance(&self) -> f64 {
        if self.recent.is_empty() {
            return f64::NAN;
        }
        self.recent.iter().sum::<f64>() / self.recent.len() as f64
    }

    fn record_chain(&mut self, accepted: usize, jumps: usize, target: f64) {
        let rate = accepted as f64 / jumps.max(1) as f64;
        let gain = (2.0 / (self.chains as f64 + 10.0).sqrt()).clamp(0.02, 1.0);
        self.ln_scale += gain * (rate - target);
        self.chains += 1;
        self.accepted += accepted as u64;
        self.attempted += jumps as u64;
        self.recent.push(rate);
        if self.recent.len() > RECENT_WINDOW {
            self.recent.remove(0);
        }
    }
}

/// Minimum acceptances for a chain to be kept.
pub const MIN_ACCEPTS: usize = 3;

/// Runs one fixed-length chain from `start`; returns its end point and acceptance count.
pub fn run_chain<L: CubeLikelihood + ?Sized>(
    like: &L,
    constraint: Constraint,
    start: &Sample,
    sides: &[f64],
    scale: f64,
    jumps: usize,
    rng: &mut ChaCha8Rng,
) -> (Sample, usize) {
    let mut cur = start.clone();
    let mut prop = vec![0.0; cur.u.len()];
    let mut accepted = 0;
    for _ in 0..jumps {
        let mut inside = true;
        for ((p, &c), &side) in prop.iter_mut().zip(&cur.u).zip(sides) {
            let z: f64 = rng.sample(StandardNormal);
            *p = c + scale * side * z;
            inside &= (0.0..=1.0).contains(p);
        }
        let key: f64 = rng.random();
        if !inside {
            continue;
        }
        let log_l = like.log_likelihood(&prop);
        if constraint.admits(log_l, key) {
            cur.u.copy_from_slice(&prop);
            cur.log_l = log_l;
            cur.key = key;
            accepted += 1;
        }
    }
    (cur, accepted)
}

/// Draws a prior sample satisfying `constraint`.
pub fn sample_constrained_prior<L: CubeLikelihood + ?Sized>(
    like: &L,
    constraint: Constraint,
    seeds: &SeedSet<'_>,
    params: &RunParams,
    state: &mut ChainState,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let dim = like.dim();
    while state.ab_initio {
        let u: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let key: f64 = rng.random();
        let log_l = like.log_likelihood(&u);
        if constraint.admits(log_l, key) {
            state.consecutive_failures = 0;
            return Ok(Sample { u, log_l, key });
        }
        state.consecutive_failures += 1;
        if state.consecutive_failures >= params.num_abi_failures {
            log::debug!("switching to constrained MCMC after {} failed draws", state.consecutive_failures);
            state.ab_initio = false;
        }
    }
    if seeds.is_empty() {
        return Err(Error::Exhausted { discarded: 0, checkpoint: None });
    }
    let mut discarded = 0;
    loop {
        let start = seeds.members[rng.random_range(0..seeds.len())];
        let (end, accepted) =
            run_chain(like, constraint, start, &seeds.sides, state.scale(), params.num_mcmc_jumps, rng);
        state.record_chain(accepted, params.num_mcmc_jumps, params.target_acceptance);
        if accepted >= MIN_ACCEPTS {
            return Ok(end);
        }
        discarded += 1;
        state.discarded += 1;
        if discarded >= params.max_discarded_chains {
            return Err(Error::Exhausted { discarded, checkpoint: None });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nested::FnLikelihood;
    use crate::rng::{child, Stream};

    fn params(abi: usize) -> RunParams {
        RunParams { num_abi_failures: abi, ..RunParams::default() }
    }

    #[test]
    fn constraint_order_breaks_ties_by_key() {
        let c = Constraint { log_l: 1.0, key: 0.5 };
        assert!(c.admits(1.5, 0.0));
        assert!(c.admits(1.0, 0.6));
        assert!(!c.admits(1.0, 0.4));
        assert!(!c.admits(0.9, 1.0));
        assert!(Constraint::NONE.admits(f64::NEG_INFINITY, 0.0));
    }

    #[test]
    fn eviction_is_monotone() {
        let mk = |l: f64| Sample { u: vec![0.5], log_l: l, key: 0.5 };
        let maxima: Vec<Sample> = (0..10).map(|k| mk(k as f64)).collect();
        let mut prev = maxima.len();
        for c in [-1.0, 2.5, 5.5, 20.0] {
            let mut m = maxima.clone();
            evict_seeds(&mut m, Constraint { log_l: c, key: 0.0 });
            assert!(m.len() <= prev);
            assert!(m.iter().all(|s| s.log_l > c));
            prev = m.len();
        }
        assert_eq!(prev, 0);
    }

    #[test]
    fn ab_initio_under_no_constraint_is_the_prior() {
        let like = FnLikelihood::new(1, |_u: &[f64]| 0.0);
        let mut state = ChainState::new(&params(10));
        let mut rng = child(1, Stream::Chains);
        let seeds = SeedSet::new(vec![]);
        let mut xs: Vec<f64> = (0..4000)
            .map(|_| sample_constrained_prior(&like, Constraint::NONE, &seeds, &params(10), &mut state, &mut rng).unwrap().u[0])
            .collect();
        xs.sort_by(f64::total_cmp);
        // Kolmogorov–Smirnov distance to U(0,1); the 0.1% critical value is 1.95/√n
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i as f64 + 1.0) / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 1.95 / n.sqrt(), "KS {ks}");
    }

    #[test]
    fn uniform_above_threshold() {
        let like = FnLikelihood::new(1, |u: &[f64]| u[0]);
        let c = Constraint { log_l: 0.9, key: 0.0 };
        let mut state = ChainState::new(&params(0));
        let mut rng = child(2, Stream::Chains);
        let start: Vec<Sample> = (0..20).map(|k| Sample { u: vec![0.905 + 0.0045 * k as f64], log_l: 0.0, key: 0.5 }).collect();
        let mut pool: Vec<Sample> = start.iter().map(|s| Sample { log_l: s.u[0], ..s.clone() }).collect();
        let mut hist = [0usize; 10];
        for i in 0..4000 {
            let idx = i % pool.len();
            let seeds = SeedSet::from_pool(&pool, Some(idx), &[]);
            let s = sample_constrained_prior(&like, c, &seeds, &params(0), &mut state, &mut rng).unwrap();
            assert!(s.u[0] > 0.9 && s.u[0] <= 1.0);
            hist[(((s.u[0] - 0.9) / 0.01) as usize).min(9)] += 1;
            pool[idx] = s;
        }
        // each decile of (0.9, 1] holds 400 ± a few standard deviations
        for h in hist {
            assert!((h as f64 - 400.0).abs() < 4.0 * (400.0f64 * 0.9).sqrt() + 40.0, "{hist:?}");
        }
    }

    #[test]
    fn failed_chain_is_discarded_and_restarted() {
        // nothing beats the constraint, so every chain has zero acceptances
        let like = FnLikelihood::new(2, |_u: &[f64]| 0.0);
        let c = Constraint { log_l: 1.0, key: 0.0 };
        let member = Sample { u: vec![0.5, 0.5], log_l: 2.0, key: 0.5 };
        let seeds = SeedSet::new(vec![&member]);
        let mut state = ChainState::new(&params(0));
        let mut rng = child(3, Stream::Chains);
        let p = RunParams { max_discarded_chains: 7, ..params(0) };
        let err = sample_constrained_prior(&like, c, &seeds, &p, &mut state, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Exhausted { discarded: 7, .. }));
        assert_eq!(state.discarded, 7);
        assert_eq!(state.chains, 7);
    }

    #[test]
    fn ab_initio_switches_off_permanently() {
        let like = FnLikelihood::new(1, |u: &[f64]| u[0]);
        let mut state = ChainState::new(&params(5));
        let mut rng = child(4, Stream::Chains);
        let member = Sample { u: vec![0.9999999], log_l: 0.9999999, key: 0.5 };
        let other = Sample { u: vec![0.99999995], log_l: 0.99999995, key: 0.5 };
        let seeds = SeedSet::new(vec![&member, &other]);
        let c = Constraint { log_l: 0.9999998, key: 0.0 };
        let _ = sample_constrained_prior(&like, c, &seeds, &params(5), &mut state, &mut rng);
        assert!(!state.ab_initio);
        let _ = sample_constrained_prior(&like, Constraint::NONE, &seeds, &params(5), &mut state, &mut rng);
        assert!(!state.ab_initio);
    }
}
