//! Evidence quadrature, posterior weights and relative entropy.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{log_add_exp, log_sum_exp};

/// Running `ln Z` and information `H` of a staircase sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    #[serde(with = "crate::io::neg_inf")]
    pub ln_z: f64,
    pub h: f64,
    pub n: usize,
}

impl Default for Accumulator {
    fn default() -> Self {
        Accumulator { ln_z: f64::NEG_INFINITY, h: 0.0, n: 0 }
    }
}

impl Accumulator {
    /// Adds the term `L·gap` given as `ln L` and `ln gap`.
    pub fn push(&mut self, ln_l: f64, ln_gap: f64) {
        self.n += 1;
        let w = ln_l + ln_gap;
        if w == f64::NEG_INFINITY {
            return;
        }
        let z_new = log_add_exp(self.ln_z, w);
        self.h = if self.ln_z == f64::NEG_INFINITY {
            ln_l - z_new
        } else {
            (w - z_new).exp() * ln_l + (self.ln_z - z_new).exp() * (self.h + self.ln_z) - z_new
        };
        self.ln_z = z_new;
    }

    /// The `2mE` stopping rule with the entropy floored at one nat and at least `m` steps.
    pub fn should_stop(&self, m: usize) -> bool {
        let e = if self.h.is_finite() { self.h.max(1.0) } else { 1.0 };
        self.n >= m && self.n as f64 > 2.0 * m as f64 * e
    }
}

/// `P_i = exp(term_i − ln Z)`, failing when every weight underflows.
pub fn posterior_weights(log_terms: &[f64], log_evidence: f64) -> Result<Vec<f64>> {
    let w: Vec<f64> = log_terms.iter().map(|t| (t - log_evidence).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateWeights);
    }
    Ok(w)
}

/// `E = Σ P_i ln(L_i / Z)`, skipping zero-weight terms.
pub fn relative_entropy(weights: &[f64], log_likelihoods: &[f64], log_evidence: f64) -> f64 {
    weights
        .iter()
        .zip(log_likelihoods)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, l)| p * (l - log_evidence))
        .sum()
}

/// Weighted quadrature points and an equal-weight resample of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPosterior {
    /// unit-cube coordinates of each weighted point
    pub samples: Vec<Vec<f64>>,
    #[serde(with = "crate::io::neg_inf_vec")]
    pub log_likelihoods: Vec<f64>,
    pub weights: Vec<f64>,
    /// indices into `samples`, drawn with replacement by weight
    pub resampled: Vec<usize>,
    pub log_evidence: f64,
}

/// Builds posterior weights from `ln L_i + ln w_i` terms and resamples `count` indices.
pub fn simulate_posterior(
    samples: Vec<Vec<f64>>,
    log_likelihoods: Vec<f64>,
    log_widths: &[f64],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SimulatedPosterior> {
    assert_eq!(samples.len(), log_likelihoods.len());
    assert_eq!(samples.len(), log_widths.len());
    let terms: Vec<f64> = log_likelihoods.iter().zip(log_widths).map(|(l, w)| l + w).collect();
    let log_evidence = log_sum_exp(&terms);
    let weights = posterior_weights(&terms, log_evidence)?;
    let dist = WeightedIndex::new(&weights).map_err(|_| Error::DegenerateWeights)?;
    let resampled = (0..count).map(|_| dist.sample(rng)).collect();
    Ok(SimulatedPosterior { samples, log_likelihoods, weights, resampled, log_evidence })
}
