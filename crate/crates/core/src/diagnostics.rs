//! Diagnostic channels, their two forward models and the weak-observation likelihood.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::ln_normal;
use crate::magnetostatics::{FieldPoint, MU_0};

/// Smallest admissible |MSE denominator| (T).
pub const EPS_DIV: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Pickup,
    Fluxloop,
    Mse,
    Rogowski,
}

impl ChannelKind {
    pub fn is_magnetic(self) -> bool {
        matches!(self, ChannelKind::Pickup | ChannelKind::Fluxloop)
    }
}

/// Weights of the two forward models in the combined likelihood of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakObsWeights {
    pub a_tilde: f64,
    pub b_tilde: f64,
    /// Width of the model-agreement factor; `None` drops the factor.
    pub sigma_tilde: Option<f64>,
}

impl WeakObsWeights {
    pub fn validate(&self) -> Result<()> {
        if !((self.a_tilde + self.b_tilde) - 1.0).abs().le(&1e-12) {
            return Err(Error::Validation(format!(
                "a_tilde + b_tilde = {} (must be 1)",
                self.a_tilde + self.b_tilde
            )));
        }
        if let Some(s) = self.sigma_tilde {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Validation(format!("sigma_tilde = {s} must be positive")));
            }
        }
        Ok(())
    }

    /// Plain single-model likelihood on the direct prediction.
    pub fn direct_only() -> Self {
        WeakObsWeights { a_tilde: 1.0, b_tilde: 0.0, sigma_tilde: None }
    }
}

/// Per-kind rule turning a channel's σ into its weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRule {
    pub a_tilde: f64,
    pub b_tilde: f64,
    /// σ̃ = scale · σ; `None` drops the agreement factor.
    pub sigma_tilde_scale: Option<f64>,
}

impl Default for WeightRule {
    fn default() -> Self {
        WeightRule { a_tilde: 0.5, b_tilde: 0.5, sigma_tilde_scale: Some(1.0) }
    }
}

impl WeightRule {
    pub fn apply(&self, sigma: f64) -> WeakObsWeights {
        WeakObsWeights {
            a_tilde: self.a_tilde,
            b_tilde: self.b_tilde,
            sigma_tilde: self.sigma_tilde_scale.map(|s| s * sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub kind: ChannelKind,
    pub position: FieldPoint,
    /// Angle of the coil normal from the R axis (pickup only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Viewing-geometry constants A₀..A₅ (MSE only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse_geometry: Option<[f64; 6]>,
    pub observation: f64,
    pub uncertainty: f64,
    /// Index into the bias vector (magnetic channels only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_index: Option<usize>,
    /// Overrides the per-kind weight rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeakObsWeights>,
}

impl Channel {
    pub fn validate(&self, n_bias: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(format!("channel {}: {msg}", self.name)));
        if !(self.uncertainty > 0.0 && self.uncertainty.is_finite()) {
            return bad(format!("uncertainty {} must be positive", self.uncertainty));
        }
        if !self.observation.is_finite() {
            return bad("observation is not finite".into());
        }
        if !(self.position.r >= 0.0 && self.position.r.is_finite() && self.position.z.is_finite()) {
            return bad("position must have finite r >= 0".into());
        }
        match self.kind {
            ChannelKind::Pickup if self.theta.is_none() => return bad("pickup needs theta".into()),
            ChannelKind::Mse => match self.mse_geometry {
                None => return bad("mse needs mse_geometry".into()),
                Some(a) if a[3] == 0.0 && a[4] == 0.0 && a[5] == 0.0 => {
                    return bad("mse denominator coefficients are all zero".into())
                }
                _ => {}
            },
            _ => {}
        }
        if self.kind == ChannelKind::Mse && self.position.r <= 0.0 {
            return bad("mse point must have r > 0".into());
        }
        if let Some(b) = self.bias_index {
            if !self.kind.is_magnetic() {
                return bad("bias only applies to pickup and flux-loop channels".into());
            }
            if b >= n_bias {
                return bad(format!("bias index {b} out of range ({n_bias} groups)"));
            }
        }
        if let Some(w) = &self.weights {
            w.validate()?;
        }
        Ok(())
    }
}

/// Direct (from J) and force-balance (from J_GS) predictions for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionPair {
    pub direct: f64,
    pub gs: f64,
}

/// Observed channels plus the rules resolving their weak-observation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSet {
    pub channels: Vec<Channel>,
    /// Number of additive bias groups.
    #[serde(default)]
    pub bias_groups: usize,
    #[serde(default)]
    pub weight_rules: BTreeMap<ChannelKind, WeightRule>,
}

impl DiagnosticSet {
    pub fn validate(&self) -> Result<()> {
        for c in &self.channels {
            c.validate(self.bias_groups)?;
        }
        for w in self.weight_rules.values() {
            w.apply(1.0).validate()?;
        }
        Ok(())
    }

    pub fn weights(&self, i: usize) -> WeakObsWeights {
        let c = &self.channels[i];
        c.weights.unwrap_or_else(|| {
            self.weight_rules.get(&c.kind).copied().unwrap_or_default().apply(c.uncertainty)
        })
    }

    pub fn resolved_weights(&self) -> Vec<WeakObsWeights> {
        (0..self.channels.len()).map(|i| self.weights(i)).collect()
    }

    pub fn count(&self, kind: ChannelKind) -> usize {
        self.channels.iter().filter(|c| c.kind == kind).count()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: DiagnosticSet = crate::io::read_json(path)?;
        set.validate()?;
        Ok(set)
    }
}

pub fn predict_pickup(b_r: f64, b_z: f64, theta: f64) -> f64 {
    b_r * theta.cos() + b_z * theta.sin()
}

pub fn predict_fluxloop(psi: f64) -> f64 {
    psi
}

/// MSE ratio `(A₀B_Z + A₁B_R + A₂B_φ) / (A₃B_Z + A₄B_R + A₅B_φ)`.
pub fn predict_mse(b_r: f64, b_z: f64, b_phi: f64, a: &[f64; 6]) -> Result<f64> {
    let num = a[0] * b_z + a[1] * b_r + a[2] * b_phi;
    let den = a[3] * b_z + a[4] * b_r + a[5] * b_phi;
    if den.abs() <= EPS_DIV {
        return Err(Error::DegenerateMse(den.abs()));
    }
    Ok(num / den)
}

pub fn predict_total_current(currents: &[f64]) -> f64 {
    currents.iter().sum()
}

/// `∫ J_GS dR dZ` over the dense beams inside the last closed flux surface.
pub fn predict_total_current_gs(j_gs: &[f64], psi_dense: &[f64], psi_gamma: f64, areas: &[f64]) -> f64 {
    j_gs.iter()
        .zip(psi_dense)
        .zip(areas)
        .filter(|((_, &psi), _)| psi >= psi_gamma)
        .map(|((j, _), a)| j * a)
        .sum()
}

/// Toroidal field `μ0 f / 2πR`.
pub fn b_phi(f: f64, r: f64) -> f64 {
    MU_0 * f / (2.0 * std::f64::consts::PI * r)
}

/// Data fit on the weighted prediction plus the agreement factor between the two models,
/// both fully normalized.
pub fn weak_log_likelihood(pair: PredictionPair, chan: &Channel, w: &WeakObsWeights) -> f64 {
    weak_log_likelihood_raw(pair, chan.observation, chan.uncertainty, w)
}

#[inline]
pub(crate) fn weak_log_likelihood_raw(pair: PredictionPair, x: f64, sigma: f64, w: &WeakObsWeights) -> f64 {
    let mix = w.a_tilde * pair.direct + w.b_tilde * pair.gs;
    let fit = ln_normal(x - mix, sigma * sigma);
    match w.sigma_tilde {
        Some(st) => fit + ln_normal(pair.direct - pair.gs, st * st),
        None => fit,
    }
}
