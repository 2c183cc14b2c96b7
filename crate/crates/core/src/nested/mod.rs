//! Nested sampling on the unit hypercube.
//!
//! A pool of `m` prior samples is shrunk by repeatedly removing its lowest-likelihood
//! member and replacing it with a prior draw above that likelihood. Removed points are
//! paired with abscissa values `t_i` from an independent pool process; the evidence is the
//! staircase sum `Σ L_i (t_{i-1} − t_i)` plus the mass still held by the live pool.
//! Further abscissa sequences are replayed against the stored likelihoods to estimate the
//! spread of `ln Z`.

pub mod abscissa;
pub mod checkpoint;
pub mod constrained;
pub mod optimize;
pub mod staircase;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Posterior;
use crate::logspace::{log_add_exp, log_sub_exp, log_sum_exp};
use crate::rng::{self, Stream};

use abscissa::{ln_gaps, AbscissaPool};
use constrained::{evict_seeds, sample_constrained_prior, ChainState, Constraint, SeedSet};
pub use optimize::{find_seeds, SeedBudget};
use staircase::{relative_entropy, simulate_posterior, Accumulator, SimulatedPosterior};

/// Log-likelihood on the unit hypercube, relative to the uniform measure.
pub trait CubeLikelihood: Sync {
    fn dim(&self) -> usize;
    /// `-inf` marks points outside the support.
    fn log_likelihood(&self, u: &[f64]) -> f64;
}

impl CubeLikelihood for Posterior {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn log_likelihood(&self, u: &[f64]) -> f64 {
        self.cube_log_likelihood(u)
    }
}

/// A closure as a likelihood, counting its evaluations.
pub struct FnLikelihood<F> {
    dim: usize,
    f: F,
    evaluations: AtomicU64,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnLikelihood<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnLikelihood { dim, f, evaluations: AtomicU64::new(0) }
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> CubeLikelihood for FnLikelihood<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_likelihood(&self, u: &[f64]) -> f64 {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        (self.f)(u)
    }
}

/// Sampler settings, named as in the usual run-parameter tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunParams {
    #[serde(rename = "sizeSamplePool")]
    pub size_sample_pool: usize,
    #[serde(rename = "numEvidenceSamples")]
    pub num_evidence_samples: usize,
    #[serde(rename = "numABIFailures")]
    pub num_abi_failures: usize,
    #[serde(rename = "numMCMCJumps")]
    pub num_mcmc_jumps: usize,
    #[serde(rename = "maxDiscardedChains")]
    pub max_discarded_chains: usize,
    #[serde(rename = "targetAcceptance")]
    pub target_acceptance: f64,
    /// Hard cap on quadrature points per sequence.
    #[serde(rename = "maxIterations")]
    pub max_iterations: Option<usize>,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            size_sample_pool: 150,
            num_evidence_samples: 36,
            num_abi_failures: 1000,
            num_mcmc_jumps: 20,
            max_discarded_chains: 100,
            target_acceptance: 0.234,
            max_iterations: None,
        }
    }
}

/// Smallest admissible values of pool size, evidence samples, ab initio failures and jumps.
pub const MINIMAL_RUN_PARAMS: (usize, usize, usize, usize) = (20, 12, 0, 12);

impl RunParams {
    pub fn validate(&self) -> Result<()> {
        let (m, k, _, j) = MINIMAL_RUN_PARAMS;
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Validation(msg)) };
        check(self.size_sample_pool >= m, format!("sizeSamplePool = {} is below {m}", self.size_sample_pool))?;
        check(
            self.num_evidence_samples >= k,
            format!("numEvidenceSamples = {} is below {k}", self.num_evidence_samples),
        )?;
        check(self.num_mcmc_jumps >= j, format!("numMCMCJumps = {} is below {j}", self.num_mcmc_jumps))?;
        check(self.max_discarded_chains >= 1, "maxDiscardedChains must be at least 1".into())?;
        check(
            self.target_acceptance > 0.0 && self.target_acceptance < 1.0,
            format!("targetAcceptance = {} must lie in (0, 1)", self.target_acceptance),
        )
    }
}

/// A prior sample with its likelihood and tie-breaking key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub u: Vec<f64>,
    #[serde(with = "crate::io::neg_inf")]
    pub log_l: f64,
    pub key: f64,
}

/// A removed sample: the `i`-th quadrature point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraturePoint {
    pub index: usize,
    #[serde(with = "crate::io::neg_inf")]
    pub log_l: f64,
    pub key: f64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceResult {
    pub log_evidence_mean: f64,
    /// twice the sample standard deviation of the per-sequence log-evidences
    pub log_evidence_2sigma: f64,
    /// nats
    pub entropy: f64,
    pub per_sequence: Vec<f64>,
    /// quadrature points used by each sequence
    pub sequence_lengths: Vec<usize>,
    pub quadrature_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub iterations: usize,
    pub chains: u64,
    pub discarded_chains: u64,
    pub acceptance_rate: f64,
    pub final_scale: f64,
    pub ab_initio_at_end: bool,
    pub maxima: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedRun {
    pub evidence: EvidenceResult,
    pub posterior: SimulatedPosterior,
    pub quadrature: Vec<QuadraturePoint>,
    /// `ln t_i` of the primary sequence
    pub ln_t: Vec<f64>,
    pub stats: RunStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSpec {
    pub path: PathBuf,
    /// iterations between checkpoints
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub posterior_samples: usize,
    pub seeding: Option<SeedBudget>,
    /// unit-cube points polished alongside the swarm's best when seeding is on
    pub seed_starts: Vec<Vec<f64>>,
    pub checkpoint: Option<CheckpointSpec>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { posterior_samples: 1800, seeding: None, seed_starts: Vec::new(), checkpoint: None }
    }
}

/// Live pool at the moment the primary sequence stopped.
#[derive(Debug, Clone)]
struct PrimaryStop {
    n: usize,
    live: Vec<Sample>,
}

pub(crate) struct Sampler<'a, L: ?Sized> {
    like: &'a L,
    params: RunParams,
    seed: u64,
    pool: Vec<Sample>,
    maxima: Vec<Sample>,
    dead: Vec<QuadraturePoint>,
    ln_t: Vec<f64>,
    ln_mean_live: Vec<f64>,
    abscissa: AbscissaPool,
    chains: ChainState,
    chain_rng: ChaCha8Rng,
    acc: Accumulator,
    checkpoint: Option<CheckpointSpec>,
    persisted_dead: usize,
}

fn eval_points<L: CubeLikelihood + ?Sized>(like: &L, pts: &[Vec<f64>]) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pts.par_iter().map(|u| like.log_likelihood(u)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pts.iter().map(|u| like.log_likelihood(u)).collect()
    }
}

fn ln_mean(pool: &[Sample]) -> f64 {
    let ls: Vec<f64> = pool.iter().map(|s| s.log_l).collect();
    log_sum_exp(&ls) - (pool.len() as f64).ln()
}

impl<'a, L: CubeLikelihood + ?Sized> Sampler<'a, L> {
    fn new(like: &'a L, params: &RunParams, seed: u64, options: &RunOptions) -> Self {
        let m = params.size_sample_pool;
        let dim = like.dim();
        let mut init = rng::child(seed, Stream::PoolInit);
        let us: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| init.random()).collect()).collect();
        let keys: Vec<f64> = (0..m).map(|_| init.random()).collect();
        let ls = eval_points(like, &us);
        let pool = us.into_iter().zip(ls).zip(keys).map(|((u, log_l), key)| Sample { u, log_l, key }).collect();
        let maxima = options.seeding.as_ref().map(|b| find_seeds(like, b, &options.seed_starts, seed)).unwrap_or_default();
        Sampler {
            like,
            params: params.clone(),
            seed,
            pool,
            maxima,
            dead: Vec::new(),
            ln_t: Vec::new(),
            ln_mean_live: Vec::new(),
            abscissa: AbscissaPool::new(m, seed, 0),
            chains: ChainState::new(params),
            chain_rng: rng::child(seed, Stream::Chains),
            acc: Accumulator::default(),
            checkpoint: options.checkpoint.clone(),
            persisted_dead: 0,
        }
    }

    fn m(&self) -> usize {
        self.params.size_sample_pool
    }

    fn step(&mut self) -> Result<()> {
        let idx = (0..self.pool.len())
            .min_by(|&a, &b| {
                let (x, y) = (&self.pool[a], &self.pool[b]);
                x.log_l.total_cmp(&y.log_l).then(x.key.total_cmp(&y.key))
            })
            .expect("non-empty pool");
        let worst = self.pool[idx].clone();
        if let Some(prev) = self.dead.last() {
            assert!(worst.log_l >= prev.log_l, "likelihood sequence must not decrease");
        }
        let ln_t = self.abscissa.next_ln_t();
        let prev_t = self.ln_t.last().copied().unwrap_or(0.0);
        self.acc.push(worst.log_l, log_sub_exp(prev_t, ln_t));
        self.ln_t.push(ln_t);
        let constraint = Constraint::of(&worst);
        self.dead.push(QuadraturePoint { index: self.dead.len(), log_l: worst.log_l, key: worst.key, u: worst.u });

        evict_seeds(&mut self.maxima, constraint);
        let seeds = SeedSet::from_pool(&self.pool, Some(idx), &self.maxima);
        let drawn =
            sample_constrained_prior(self.like, constraint, &seeds, &self.params, &mut self.chains, &mut self.chain_rng);
        let fresh = match drawn {
            Ok(s) => s,
            Err(Error::Exhausted { discarded, .. }) => {
                let checkpoint = self.checkpoint.as_ref().map(|c| c.path.clone());
                return Err(Error::Exhausted { discarded, checkpoint });
            }
            Err(e) => return Err(e),
        };
        self.pool[idx] = fresh;
        self.ln_mean_live.push(ln_mean(&self.pool));
        Ok(())
    }

    fn n(&self) -> usize {
        self.dead.len()
    }

    fn at_cap(&self, n: usize) -> bool {
        self.params.max_iterations.is_some_and(|cap| n >= cap)
    }

    fn run_primary(&mut self) -> Result<PrimaryStop> {
        let every = self.checkpoint.as_ref().map(|c| c.every).filter(|&e| e > 0);
        while !self.acc.should_stop(self.m()) && !self.at_cap(self.n()) {
            self.step()?;
            let n = self.n();
            if n % 1000 == 0 {
                log::info!(
                    "iteration {n}: ln L = {:.4}, ln Z = {:.4}, H = {:.3}, acceptance {:.3}",
                    self.dead[n - 1].log_l,
                    self.acc.ln_z,
                    self.acc.h,
                    self.chains.trailing_acceptance()
                );
            }
            if every.is_some_and(|e| n % e == 0) {
                self.write_checkpoint()?;
            }
        }
        if self.at_cap(self.n()) && !self.acc.should_stop(self.m()) {
            log::warn!("iteration cap reached before the stopping rule");
        }
        Ok(PrimaryStop { n: self.n(), live: self.pool.clone() })
    }

    /// Replays sequence `k` against the stored likelihoods, extending them when needed.
    fn replay(&mut self, k: u32) -> Result<(f64, usize)> {
        let mut pool = AbscissaPool::new(self.m(), self.seed, k);
        let mut acc = Accumulator::default();
        let mut prev = 0.0;
        let mut i = 0;
        loop {
            if i == self.n() {
                self.step()?;
            }
            let t = pool.next_ln_t();
            acc.push(self.dead[i].log_l, log_sub_exp(prev, t));
            prev = t;
            i += 1;
            if acc.should_stop(self.m()) || self.at_cap(i) {
                break;
            }
        }
        Ok((log_add_exp(acc.ln_z, prev + self.ln_mean_live[i - 1]), i))
    }

    fn finish(mut self, stop: PrimaryStop, posterior_samples: usize) -> Result<NestedRun> {
        let m = self.m();
        let n0 = stop.n;
        let gaps = ln_gaps(&self.ln_t[..n0]);
        let ln_t_end = self.ln_t[n0 - 1];
        let primary = log_add_exp(self.acc_at(n0, &gaps), ln_t_end + self.ln_mean_live[n0 - 1]);
        let mut per_sequence = vec![primary];
        let mut lengths = vec![n0];
        for k in 1..self.params.num_evidence_samples {
            let (z, len) = self.replay(k as u32)?;
            per_sequence.push(z);
            lengths.push(len);
        }

        let mut samples: Vec<Vec<f64>> = self.dead[..n0].iter().map(|q| q.u.clone()).collect();
        let mut log_l: Vec<f64> = self.dead[..n0].iter().map(|q| q.log_l).collect();
        let mut widths = gaps;
        let live_width = ln_t_end - (m as f64).ln();
        for s in &stop.live {
            samples.push(s.u.clone());
            log_l.push(s.log_l);
            widths.push(live_width);
        }
        let mut resample_rng = rng::child(self.seed, Stream::Resample);
        let posterior = simulate_posterior(samples, log_l, &widths, posterior_samples, &mut resample_rng)?;
        let entropy = relative_entropy(&posterior.weights, &posterior.log_likelihoods, posterior.log_evidence);

        let k = per_sequence.len() as f64;
        let mean = per_sequence.iter().sum::<f64>() / k;
        let var = if per_sequence.len() > 1 {
            per_sequence.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        let evidence = EvidenceResult {
            log_evidence_mean: mean,
            log_evidence_2sigma: 2.0 * var.sqrt(),
            entropy,
            per_sequence,
            sequence_lengths: lengths,
            quadrature_size: self.n(),
        };
        let stats = RunStats {
            iterations: self.n(),
            chains: self.chains.chains,
            discarded_chains: self.chains.discarded,
            acceptance_rate: if self.chains.attempted > 0 {
                self.chains.accepted as f64 / self.chains.attempted as f64
            } else {
                f64::NAN
            },
            final_scale: self.chains.scale(),
            ab_initio_at_end: self.chains.ab_initio,
            maxima: self.maxima.len(),
        };
        let ln_t = std::mem::take(&mut self.ln_t);
        Ok(NestedRun { evidence, posterior, quadrature: std::mem::take(&mut self.dead), ln_t, stats })
    }

    /// Staircase `ln Z` over the first `n` points.
    fn acc_at(&self, n: usize, gaps: &[f64]) -> f64 {
        let terms: Vec<f64> = self.dead[..n].iter().zip(gaps).map(|(q, g)| q.log_l + g).collect();
        log_sum_exp(&terms)
    }
}

/// Runs nested sampling to the stopping rule and replays the remaining abscissa sequences.
pub fn run_nested<L: CubeLikelihood + ?Sized>(
    like: &L,
    params: &RunParams,
    seed: u64,
    options: &RunOptions,
) -> Result<NestedRun> {
    params.validate()?;
    let mut sampler = Sampler::new(like, params, seed, options);
    let stop = sampler.run_primary()?;
    sampler.finish(stop, options.posterior_samples)
}

/// Continues a run from a checkpoint written by [`run_nested`].
pub fn resume_nested<L: CubeLikelihood + ?Sized>(like: &L, options: &RunOptions) -> Result<NestedRun> {
    let spec = options
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Validation("resume needs a checkpoint path".into()))?;
    let mut sampler = Sampler::from_checkpoint(like, spec)?;
    let stop = sampler.run_primary()?;
    sampler.finish(stop, options.posterior_samples)
}
