//! Abscissa sequences: a pool of `m` values on `[0, 1]`, the largest extracted each step
//! and replaced by a uniform draw on `[0, t_i]`. Everything is kept as `ln t`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::distr::Open01;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream, StreamPos};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct LnT(f64);

impl Eq for LnT {}

impl PartialOrd for LnT {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LnT {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Generator of one abscissa sequence.
#[derive(Debug, Clone)]
pub struct AbscissaPool {
    heap: BinaryHeap<LnT>,
    rng: ChaCha8Rng,
    seed: u64,
    last: f64,
}

/// Serializable state of an [`AbscissaPool`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbscissaState {
    pub pool: Vec<f64>,
    pub rng: StreamPos,
    pub last: f64,
}

impl AbscissaPool {
    pub fn new(m: usize, seed: u64, sequence: u32) -> Self {
        let mut rng = rng::child(seed, Stream::Abscissa(sequence));
        let heap = (0..m).map(|_| LnT(rng.sample::<f64, _>(Open01).ln())).collect();
        AbscissaPool { heap, rng, seed, last: 0.0 }
    }

    /// Extracts the current maximum `ln t_i` and refills the pool below it.
    pub fn next_ln_t(&mut self) -> f64 {
        let LnT(t) = self.heap.pop().expect("abscissa pool is never empty");
        assert!(t < self.last, "abscissa must strictly decrease");
        let u: f64 = self.rng.sample(Open01);
        self.heap.push(LnT(t + u.ln()));
        self.last = t;
        t
    }

    pub fn take(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_ln_t()).collect()
    }

    pub fn state(&self) -> AbscissaState {
        let mut pool: Vec<f64> = self.heap.iter().map(|v| v.0).collect();
        pool.sort_by(|a, b| b.total_cmp(a));
        AbscissaState { pool, rng: rng::save(&self.rng, self.seed), last: self.last }
    }

    pub fn restore(state: &AbscissaState) -> Self {
        AbscissaPool {
            heap: state.pool.iter().map(|&v| LnT(v)).collect(),
            rng: rng::restore(state.rng),
            seed: state.rng.seed,
            last: state.last,
        }
    }
}

/// `ln(t_{i-1} - t_i)` for a sequence of `ln t`, with `t_0 = 1`.
pub fn ln_gaps(ln_t: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    ln_t.iter()
        .map(|&t| {
            let g = crate::logspace::log_sub_exp(prev, t);
            prev = t;
            g
        })
        .collect()
}
