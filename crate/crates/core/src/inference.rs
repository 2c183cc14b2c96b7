//! Model state, parameter space, force-balance prior and the total log-posterior.

use std::io::Write;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    b_phi, predict_mse, predict_total_current_gs, weak_log_likelihood_raw, DiagnosticSet,
    PredictionPair, WeakObsWeights,
};
use crate::error::{Error, Result};
use crate::logspace::ln_normal;
use crate::machine::{matvec_add, matvec_into, MachineGeometry, Operators, RowSpec};
use crate::profiles::{discrepancy_into, eval_f, gs_point, ProfileCoeffs};

/// Support of the force-balance prior variance ((kA)²).
pub const SIGMA_STAR_SQ_BOUNDS: (f64, f64) = (1e-5, 10.0);

/// Full model-parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    /// A per plasma beam
    pub beam_currents: Vec<f64>,
    pub profile: ProfileCoeffs,
    /// Wb
    pub psi_gamma: f64,
    /// (kA)²
    pub sigma_star_sq: f64,
    /// additive channel biases, in the units of the channels they apply to
    pub biases: Vec<f64>,
    /// A per passive conductor
    pub passive_currents: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDescriptor {
    pub name: String,
    pub units: String,
    pub lower: f64,
    pub upper: f64,
    pub transform: Transform,
}

impl ParamDescriptor {
    fn new(name: impl Into<String>, units: &str, (lower, upper): (f64, f64), transform: Transform) -> Self {
        ParamDescriptor { name: name.into(), units: units.into(), lower, upper, transform }
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        match self.transform {
            Transform::Linear => self.lower + u * (self.upper - self.lower),
            Transform::Log => (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp(),
        }
    }

    pub fn to_unit(&self, x: f64) -> f64 {
        match self.transform {
            Transform::Linear => (x - self.lower) / (self.upper - self.lower),
            Transform::Log => (x.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln()),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// `ln |dx/du|`
    pub fn ln_jacobian(&self, x: f64) -> f64 {
        match self.transform {
            Transform::Linear => (self.upper - self.lower).ln(),
            Transform::Log => x.ln() + (self.upper.ln() - self.lower.ln()).ln(),
        }
    }
}

/// Uniform-prior bounds of every parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBounds {
    /// A, shared by every plasma beam
    pub beam_current: (f64, f64),
    pub p_c: [(f64, f64); 4],
    pub f_c: [(f64, f64); 3],
    pub psi_gamma: (f64, f64),
    /// one range per bias group
    #[serde(default)]
    pub biases: Vec<(f64, f64)>,
    #[serde(default = "default_passive")]
    pub passive_current: (f64, f64),
    /// kA², uniform
    #[serde(default = "default_sigma_star_sq")]
    pub sigma_star_sq: (f64, f64),
}

fn default_passive() -> (f64, f64) {
    (-5.0e4, 5.0e4)
}

fn default_sigma_star_sq() -> (f64, f64) {
    SIGMA_STAR_SQ_BOUNDS
}

impl PriorBounds {
    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.beam_current)
            .chain(self.p_c)
            .chain(self.f_c)
            .chain([self.psi_gamma, self.passive_current, self.sigma_star_sq])
            .chain(self.biases.iter().copied());
        for (lo, hi) in all {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Validation(format!("prior bound [{lo}, {hi}] must be finite with lower < upper")));
            }
        }
        if self.sigma_star_sq.0 <= 0.0 {
            return Err(Error::Validation("the σ*² range must be positive".into()));
        }
        Ok(())
    }
}

/// Index ranges of each block in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub beams: Range<usize>,
    pub p_c: Range<usize>,
    pub f_c: Range<usize>,
    pub psi_gamma: usize,
    pub sigma_star_sq: usize,
    pub biases: Range<usize>,
    pub passive: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub params: Vec<ParamDescriptor>,
    pub layout: Layout,
    /// carried into every state, not inferred
    pub f_boundary: f64,
}

impl ParameterSpace {
    pub fn new(bounds: &PriorBounds, n_beams: usize, n_passive: usize, f_boundary: f64) -> Result<Self> {
        bounds.validate()?;
        let mut params = Vec::new();
        let block = |params: &mut Vec<ParamDescriptor>, items: Vec<ParamDescriptor>| {
            let start = params.len();
            params.extend(items);
            start..params.len()
        };
        let beams = block(
            &mut params,
            (0..n_beams).map(|i| ParamDescriptor::new(format!("I[{i}]"), "A", bounds.beam_current, Transform::Linear)).collect(),
        );
        let p_units = ["Pa/Wb", "Pa/Wb^2", "Pa/Wb^3", "Pa/Wb^4"];
        let p_c = block(
            &mut params,
            (0..4).map(|k| ParamDescriptor::new(format!("p_c{k}"), p_units[k], bounds.p_c[k], Transform::Linear)).collect(),
        );
        let f_units = ["A/Wb", "A/Wb^2", "A/Wb^3"];
        let f_c = block(
            &mut params,
            (0..3)
                .map(|k| ParamDescriptor::new(format!("f_c{}", k + 1), f_units[k], bounds.f_c[k], Transform::Linear))
                .collect(),
        );
        let psi_gamma = params.len();
        params.push(ParamDescriptor::new("psi_gamma", "Wb", bounds.psi_gamma, Transform::Linear));
        let sigma_star_sq = params.len();
        params.push(ParamDescriptor::new("sigma_star_sq", "kA^2", bounds.sigma_star_sq, Transform::Log));
        let biases = block(
            &mut params,
            bounds
                .biases
                .iter()
                .enumerate()
                .map(|(g, b)| ParamDescriptor::new(format!("bias[{g}]"), "channel", *b, Transform::Linear))
                .collect(),
        );
        let passive = block(
            &mut params,
            (0..n_passive)
                .map(|i| ParamDescriptor::new(format!("I_passive[{i}]"), "A", bounds.passive_current, Transform::Linear))
                .collect(),
        );
        Ok(ParameterSpace {
            params,
            layout: Layout { beams, p_c, f_c, psi_gamma, sigma_star_sq, biases, passive },
            f_boundary,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn to_vector(&self, s: &EquilibriumState) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        x.extend(&s.beam_currents);
        x.extend(s.profile.p_c);
        x.extend(s.profile.f_c);
        x.push(s.psi_gamma);
        x.push(s.sigma_star_sq);
        x.extend(&s.biases);
        x.extend(&s.passive_currents);
        assert_eq!(x.len(), self.dim(), "state does not match the parameter space");
        x
    }

    pub fn from_vector(&self, x: &[f64]) -> EquilibriumState {
        assert_eq!(x.len(), self.dim());
        let l = &self.layout;
        let mut p_c = [0.0; 4];
        p_c.copy_from_slice(&x[l.p_c.clone()]);
        let mut f_c = [0.0; 3];
        f_c.copy_from_slice(&x[l.f_c.clone()]);
        EquilibriumState {
            beam_currents: x[l.beams.clone()].to_vec(),
            profile: ProfileCoeffs::new(p_c, f_c, self.f_boundary),
            psi_gamma: x[l.psi_gamma],
            sigma_star_sq: x[l.sigma_star_sq],
            biases: x[l.biases.clone()].to_vec(),
            passive_currents: x[l.passive.clone()].to_vec(),
        }
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.params.iter().zip(u).map(|(p, &v)| p.from_unit(v)).collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.params.iter().zip(x).map(|(p, &v)| p.to_unit(v)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.params.iter().zip(x).all(|(p, &v)| p.contains(v))
    }

    /// Sum of the uniform log-densities (the same everywhere inside the box).
    pub fn ln_uniform_density(&self) -> f64 {
        -self.params.iter().map(|p| (p.upper - p.lower).ln()).sum::<f64>()
    }

    pub fn ln_jacobian(&self, x: &[f64]) -> f64 {
        self.params.iter().zip(x).map(|(p, &v)| p.ln_jacobian(v)).sum()
    }
}

/// A log-density value, or an explicit rejection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogValue {
    Finite(f64),
    Rejected(Rejection),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    OutOfBounds,
    DegenerateMse,
    NonFinite,
}

impl LogValue {
    pub fn value(self) -> f64 {
        match self {
            LogValue::Finite(v) => v,
            LogValue::Rejected(_) => f64::NEG_INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, LogValue::Finite(_))
    }
}

/// Everything computed along the way to a posterior value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub log_posterior: LogValue,
    pub log_prior: f64,
    pub log_likelihood: f64,
    pub predictions: Vec<PredictionPair>,
    /// A per inference beam
    pub delta_i: Vec<f64>,
    pub psi_dense: Vec<f64>,
    /// A/m² per dense beam
    pub j_gs: Vec<f64>,
}

/// Channel data flattened for the hot loop.
#[derive(Debug, Clone)]
struct ChannelData {
    row: RowSpec,
    x: f64,
    sigma: f64,
    r: f64,
    mse: [f64; 6],
    bias: Option<usize>,
    weights: WeakObsWeights,
}

/// The posterior over [`EquilibriumState`] for one machine and data set.
pub struct Posterior {
    pub space: ParameterSpace,
    pub ops: Operators,
    pub data: DiagnosticSet,
    channels: Vec<ChannelData>,
    inference_areas: Vec<f64>,
    dense_r: Vec<f64>,
    evaluations: AtomicU64,
    degenerate_mse: AtomicU64,
    trace: Option<Mutex<Box<dyn Write + Send>>>,
}

impl std::fmt::Debug for Posterior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Posterior")
            .field("dim", &self.space.dim())
            .field("channels", &self.channels.len())
            .field("evaluations", &self.evaluations())
            .finish()
    }
}

impl Posterior {
    pub fn new(space: ParameterSpace, ops: Operators, data: DiagnosticSet) -> Result<Self> {
        data.validate()?;
        if ops.rows.len() != data.channels.len() {
            return Err(Error::Validation("operators were built for a different channel list".into()));
        }
        if space.layout.beams.len() != ops.n_plasma() || space.layout.passive.len() != ops.n_passive() {
            return Err(Error::Validation("parameter space does not match the machine".into()));
        }
        if space.layout.biases.len() != data.bias_groups {
            return Err(Error::Validation(format!(
                "{} bias ranges configured for {} bias groups",
                space.layout.biases.len(),
                data.bias_groups
            )));
        }
        let weights = data.resolved_weights();
        let channels = data
            .channels
            .iter()
            .zip(&ops.rows)
            .zip(weights)
            .map(|((c, row), weights)| ChannelData {
                row: *row,
                x: c.observation,
                sigma: c.uncertainty,
                r: c.position.r,
                mse: c.mse_geometry.unwrap_or([0.0; 6]),
                bias: c.bias_index,
                weights,
            })
            .collect();
        let inference_areas = ops.grids.inference.iter().map(|b| b.area()).collect();
        let dense_r = ops.grids.dense.iter().map(|b| b.r_center).collect();
        Ok(Posterior {
            space,
            ops,
            data,
            channels,
            inference_areas,
            dense_r,
            evaluations: AtomicU64::new(0),
            degenerate_mse: AtomicU64::new(0),
            trace: None,
        })
    }

    /// Builds operators for `machine` and assembles the posterior.
    pub fn assemble(machine: &MachineGeometry, data: DiagnosticSet, bounds: &PriorBounds) -> Result<Self> {
        let ops = Operators::build(machine, &data)?;
        let space = ParameterSpace::new(bounds, ops.n_plasma(), ops.n_passive(), machine.f_boundary)?;
        Self::new(space, ops, data)
    }

    /// Appends one `hash,log-value` record per evaluation to `sink`.
    pub fn with_trace(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.trace = Some(Mutex::new(sink));
        self
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn degenerate_mse_count(&self) -> u64 {
        self.degenerate_mse.load(Ordering::Relaxed)
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Dense-grid ψ for the currents of `s`.
    pub fn psi_dense(&self, s: &EquilibriumState) -> Vec<f64> {
        let mut psi = self.ops.dense_psi_external.clone();
        matvec_add(&self.ops.dense_psi, &s.beam_currents, &mut psi);
        matvec_add(&self.ops.dense_psi_passive, &s.passive_currents, &mut psi);
        psi
    }

    pub fn j_gs(&self, s: &EquilibriumState, psi_dense: &[f64]) -> Vec<f64> {
        psi_dense
            .iter()
            .zip(&self.dense_r)
            .map(|(&psi, &r)| gs_point(&s.profile, s.psi_gamma, psi, r))
            .collect()
    }

    /// Per inference beam `∫|J − J_GS|` (A).
    pub fn delta_i(&self, s: &EquilibriumState, j_gs: &[f64]) -> Vec<f64> {
        let j: Vec<f64> = s.beam_currents.iter().zip(&self.inference_areas).map(|(i, a)| i / a).collect();
        let mut out = vec![0.0; j.len()];
        discrepancy_into(&j, j_gs, &self.ops.grids, &mut out);
        out
    }

    /// Force-balance prior with ΔI in kA, plus the uniform densities of the bounded box.
    pub fn log_prior_from(&self, s: &EquilibriumState, delta_i: &[f64]) -> LogValue {
        let x = self.space.to_vector(s);
        if !self.space.contains(&x) {
            return LogValue::Rejected(Rejection::OutOfBounds);
        }
        let gauss: f64 = delta_i.iter().map(|d| ln_normal(d * 1e-3, s.sigma_star_sq)).sum();
        let v = gauss + self.space.ln_uniform_density();
        if v.is_finite() {
            LogValue::Finite(v)
        } else {
            LogValue::Rejected(Rejection::NonFinite)
        }
    }

    pub fn log_prior(&self, s: &EquilibriumState) -> LogValue {
        if !self.space.contains(&self.space.to_vector(s)) {
            return LogValue::Rejected(Rejection::OutOfBounds);
        }
        let psi = self.psi_dense(s);
        let j_gs = self.j_gs(s, &psi);
        self.log_prior_from(s, &self.delta_i(s, &j_gs))
    }

    /// Both forward models for every channel.
    pub fn predict_all(&self, s: &EquilibriumState, psi_dense: &[f64], j_gs: &[f64]) -> Result<Vec<PredictionPair>> {
        let ops = &self.ops;
        let n = ops.n_rows();
        // fields not carried by the plasma are common to both models
        let mut common = ops.external.clone();
        matvec_add(&ops.passive, &s.passive_currents, &mut common);
        let mut direct = common.clone();
        matvec_add(&ops.direct, &s.beam_currents, &mut direct);
        let dense_currents: Vec<f64> = j_gs.iter().zip(&ops.dense_areas).map(|(j, a)| j * a).collect();
        let mut gs = vec![0.0; n];
        matvec_into(&ops.gs, &dense_currents, &mut gs);
        gs.iter_mut().zip(&common).for_each(|(g, c)| *g += c);
        let total_direct: f64 = s.beam_currents.iter().sum();
        let total_gs = predict_total_current_gs(j_gs, psi_dense, s.psi_gamma, &ops.dense_areas);
        self.channels
            .iter()
            .map(|c| {
                let bias = c.bias.map_or(0.0, |b| s.biases[b]);
                Ok(match c.row {
                    RowSpec::Linear(k) => PredictionPair { direct: direct[k] + bias, gs: gs[k] + bias },
                    RowSpec::Total => PredictionPair { direct: total_direct, gs: total_gs },
                    RowSpec::Mse { br, bz, psi } => {
                        // f is the vacuum value outside the boundary
                        let psi_here = direct[psi];
                        let f = if psi_here >= s.psi_gamma {
                            eval_f(&s.profile, s.psi_gamma, psi_here)
                        } else {
                            s.profile.f_boundary
                        };
                        let bphi = b_phi(f, c.r);
                        PredictionPair {
                            direct: predict_mse(direct[br], direct[bz], bphi, &c.mse)?,
                            gs: predict_mse(gs[br], gs[bz], bphi, &c.mse)?,
                        }
                    }
                })
            })
            .collect()
    }

    pub fn log_likelihood_of(&self, predictions: &[PredictionPair]) -> f64 {
        self.channels
            .iter()
            .zip(predictions)
            .map(|(c, p)| weak_log_likelihood_raw(*p, c.x, c.sigma, &c.weights))
            .sum()
    }

    /// Full evaluation with intermediate products.
    pub fn evaluate(&self, s: &EquilibriumState) -> Evaluation {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let psi_dense = self.psi_dense(s);
        let j_gs = self.j_gs(s, &psi_dense);
        let delta_i = self.delta_i(s, &j_gs);
        let prior = self.log_prior_from(s, &delta_i);
        let mut out = Evaluation {
            log_posterior: prior,
            log_prior: prior.value(),
            log_likelihood: f64::NEG_INFINITY,
            predictions: Vec::new(),
            delta_i,
            psi_dense,
            j_gs,
        };
        if let LogValue::Finite(lp) = prior {
            match self.predict_all(s, &out.psi_dense, &out.j_gs) {
                Ok(pred) => {
                    let ll = self.log_likelihood_of(&pred);
                    out.log_likelihood = ll;
                    out.predictions = pred;
                    out.log_posterior = if (lp + ll).is_finite() {
                        LogValue::Finite(lp + ll)
                    } else {
                        LogValue::Rejected(Rejection::NonFinite)
                    };
                }
                Err(_) => {
                    let n = self.degenerate_mse.fetch_add(1, Ordering::Relaxed);
                    if n == 0 {
                        log::warn!("degenerate MSE geometry encountered; state rejected");
                    }
                    out.log_posterior = LogValue::Rejected(Rejection::DegenerateMse);
                }
            }
        }
        if let Some(t) = &self.trace {
            let x = self.space.to_vector(s);
            let mut h = Sha256::new();
            for v in &x {
                h.update(v.to_le_bytes());
            }
            let digest = hex::encode(&h.finalize()[..8]);
            if let Ok(mut w) = t.lock() {
                let _ = writeln!(w, "{digest},{:e}", out.log_posterior.value());
            }
        }
        out
    }

    pub fn log_posterior(&self, s: &EquilibriumState) -> LogValue {
        self.evaluate(s).log_posterior
    }

    /// Log-likelihood relative to the uniform measure on the unit cube, as seen by the sampler.
    pub fn cube_log_likelihood(&self, u: &[f64]) -> f64 {
        if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return f64::NEG_INFINITY;
        }
        let x = self.space.from_unit(u);
        let s = self.space.from_vector(&x);
        match self.log_posterior(&s) {
            LogValue::Finite(v) => v + self.space.ln_jacobian(&x),
            LogValue::Rejected(_) => f64::NEG_INFINITY,
        }
    }
}
