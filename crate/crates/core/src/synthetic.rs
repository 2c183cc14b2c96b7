//! Synthetic machine, force-balance ground truth and noisy diagnostics.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{Channel, ChannelKind, DiagnosticSet, WeightRule};
use crate::error::{Error, Result};
use crate::inference::{EquilibriumState, Posterior, PriorBounds, SIGMA_STAR_SQ_BOUNDS};
use crate::machine::{MachineGeometry, Operators};
use crate::magnetostatics::{Beam, BeamGrid, BeamRole, FieldPoint, QuadSettings};
pub use crate::equilibrium::ProfileShape;
use crate::equilibrium::{solve_force_balance, Solution, SolveSettings};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConductorSpec {
    pub r: f64,
    pub z: f64,
    pub width: f64,
    pub height: f64,
    /// coil current, or the true current of a passive conductor (A)
    pub current: f64,
}

impl ConductorSpec {
    fn beam(&self) -> Result<Beam> {
        Beam::new(self.r, self.z, self.width, self.height)
    }
}

/// Diagnostic counts and noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelLayout {
    pub pickups: usize,
    pub flux_loops: usize,
    pub mse: usize,
    /// rectangle `(r_min, r_max, z_min, z_max)` carrying pickups and flux loops
    pub wall: (f64, f64, f64, f64),
    /// T
    pub pickup_sigma: f64,
    /// Wb
    pub flux_loop_sigma: f64,
    pub mse_sigma: f64,
    /// A
    pub rogowski_sigma: f64,
    /// flux loops share one additive offset
    pub flux_loop_bias: bool,
}

impl Default for ChannelLayout {
    fn default() -> Self {
        ChannelLayout {
            pickups: 76,
            flux_loops: 24,
            mse: 31,
            wall: (0.22, 1.52, -0.98, 0.98),
            pickup_sigma: 1e-3,
            flux_loop_sigma: 1e-3,
            mse_sigma: 5e-3,
            rogowski_sigma: 1e3,
            flux_loop_bias: true,
        }
    }
}

/// Localized Gaussian current added to the beam currents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub r: f64,
    pub z: f64,
    /// m
    pub radius: f64,
    /// integrated current (A)
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub name: String,
    pub r_range: (f64, f64),
    pub z_range: (f64, f64),
    pub nr: usize,
    pub nz: usize,
    pub dense_factor: usize,
    pub coils: Vec<ConductorSpec>,
    pub passive: Vec<ConductorSpec>,
    /// A
    pub f_boundary: f64,
    pub channels: ChannelLayout,
    /// A
    pub target_current: f64,
    pub shape: ProfileShape,
    /// `ψ_γ` sits at this fraction of the way from the axis flux to the edge flux
    pub boundary_fraction: f64,
    pub tol: f64,
    pub max_iterations: usize,
    /// weight of the new currents in each fixed-point update
    pub relaxation: f64,
    pub blob: Blob,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let coil = |r, z, current| ConductorSpec { r, z, width: 0.1, height: 0.1, current };
        let wall = |r, z| ConductorSpec { r, z, width: 0.04, height: 0.04, current: 2.0e3 };
        SyntheticConfig {
            name: "desk".into(),
            r_range: (0.30, 1.40),
            z_range: (-0.85, 0.85),
            nr: 9,
            nz: 13,
            dense_factor: 2,
            coils: vec![coil(1.8, 0.9, -2.0e5), coil(1.8, -0.9, -2.0e5), coil(0.5, 1.2, 3.0e4), coil(0.5, -1.2, 3.0e4)],
            passive: vec![wall(1.6, 0.6), wall(1.6, -0.6)],
            f_boundary: 2.1e6,
            channels: ChannelLayout::default(),
            target_current: 4.0e5,
            shape: ProfileShape::default(),
            boundary_fraction: 0.99,
            tol: 1e-7,
            max_iterations: 200,
            relaxation: 0.5,
            blob: Blob { r: 1.02, z: 0.26, radius: 0.08, amplitude: 4.0e4 },
        }
    }
}

impl SyntheticConfig {
    pub fn solve_settings(&self) -> SolveSettings {
        SolveSettings {
            shape: self.shape,
            target_current: self.target_current,
            f_boundary: self.f_boundary,
            boundary_fraction: self.boundary_fraction,
            tol: self.tol,
            max_iterations: self.max_iterations,
            relaxation: self.relaxation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nr == 0 || self.nz == 0 || self.dense_factor == 0 {
            return Err(Error::Validation("grid sizes must be positive".into()));
        }
        self.solve_settings().validate()
    }
}

/// Machine, channel layout and the response operators between them.
#[derive(Debug, Clone)]
pub struct SyntheticMachine {
    pub machine: MachineGeometry,
    /// channel layout with zero observations
    pub layout: DiagnosticSet,
    pub ops: Operators,
    pub passive_currents: Vec<f64>,
}

fn wall_points(wall: (f64, f64, f64, f64), n: usize, phase: f64) -> Vec<(FieldPoint, f64)> {
    let (r0, r1, z0, z1) = wall;
    let (w, h) = (r1 - r0, z1 - z0);
    let perimeter = 2.0 * (w + h);
    (0..n)
        .map(|i| {
            let mut s = (i as f64 + phase) / n as f64 * perimeter;
            // anticlockwise from the outboard midplane; θ is the tangent direction
            let legs = [
                (h / 2.0, (r1, 0.0), std::f64::consts::FRAC_PI_2),
                (w, (r1, z1), std::f64::consts::PI),
                (h, (r0, z1), -std::f64::consts::FRAC_PI_2),
                (w, (r0, z0), 0.0),
                (h / 2.0, (r1, z0), std::f64::consts::FRAC_PI_2),
            ];
            for (len, (rs, zs), theta) in legs {
                if s <= len {
                    let (dr, dz) = (theta.cos(), theta.sin());
                    return (FieldPoint::new(rs + s * dr, zs + s * dz), theta);
                }
                s -= len;
            }
            (FieldPoint::new(r1, 0.0), std::f64::consts::FRAC_PI_2)
        })
        .collect()
}

/// Builds the machine geometry, the channel layout and the operators.
pub fn build_machine(cfg: &SyntheticConfig) -> Result<SyntheticMachine> {
    cfg.validate()?;
    let mut beams = BeamGrid::rectangular(cfg.r_range, cfg.z_range, cfg.nr, cfg.nz, BeamRole::Plasma)?.beams;
    let mut labels = vec![BeamRole::Plasma; beams.len()];
    for p in &cfg.passive {
        beams.push(p.beam()?);
        labels.push(BeamRole::PassiveConductor);
    }
    for c in &cfg.coils {
        beams.push(c.beam()?);
        labels.push(BeamRole::Coil);
    }
    let machine = MachineGeometry {
        name: cfg.name.clone(),
        grid: BeamGrid::new(beams, labels)?,
        coil_currents: cfg.coils.iter().map(|c| c.current).collect(),
        f_boundary: cfg.f_boundary,
        dense_factor: cfg.dense_factor,
        quad: QuadSettings::default(),
    };
    machine.validate()?;

    let lay = &cfg.channels;
    let mk = |name: String, kind, position, theta, mse_geometry, sigma, bias_index| Channel {
        name,
        kind,
        position,
        theta,
        mse_geometry,
        observation: 0.0,
        uncertainty: sigma,
        bias_index,
        weights: None,
    };
    let mut channels = Vec::new();
    for (i, (p, theta)) in wall_points(lay.wall, lay.pickups, 0.5).into_iter().enumerate() {
        // alternate tangential and normal coils
        let theta = if i % 2 == 0 { theta } else { theta + std::f64::consts::FRAC_PI_2 };
        channels.push(mk(format!("pickup{i:02}"), ChannelKind::Pickup, p, Some(theta), None, lay.pickup_sigma, None));
    }
    let (r0, r1, z0, z1) = lay.wall;
    let outer = (r0 - 0.03, r1 + 0.03, z0 - 0.03, z1 + 0.03);
    let bias = lay.flux_loop_bias.then_some(0);
    for (i, (p, _)) in wall_points(outer, lay.flux_loops, 0.25).into_iter().enumerate() {
        channels.push(mk(format!("flux{i:02}"), ChannelKind::Fluxloop, p, None, None, lay.flux_loop_sigma, bias));
    }
    let (a, b) = cfg.r_range;
    let span = b - a;
    for i in 0..lay.mse {
        let r = a + span * (0.05 + 0.9 * i as f64 / (lay.mse.max(2) - 1) as f64);
        // viewing geometry varies slowly along the beam line
        let view = 0.3 + 0.5 * (r - a) / span;
        let geom = [view.cos(), 0.05 * view.sin(), 0.0, 0.0, 0.0, 1.0];
        channels.push(mk(
            format!("mse{i:02}"),
            ChannelKind::Mse,
            FieldPoint::new(r, 0.0),
            None,
            Some(geom),
            lay.mse_sigma,
            None,
        ));
    }
    channels.push(mk("rogowski".into(), ChannelKind::Rogowski, FieldPoint::new(0.0, 0.0), None, None, lay.rogowski_sigma, None));
    let weight_rules: BTreeMap<ChannelKind, WeightRule> = BTreeMap::new();
    let layout = DiagnosticSet { channels, bias_groups: usize::from(lay.flux_loop_bias), weight_rules };
    layout.validate()?;
    let ops = Operators::build(&machine, &layout)?;
    Ok(SyntheticMachine { machine, layout, ops, passive_currents: cfg.passive.iter().map(|p| p.current).collect() })
}

/// Ground-truth equilibrium and the noiseless predictions it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub state: EquilibriumState,
    pub psi_axis: f64,
    pub alpha: f64,
    pub shape: ProfileShape,
    /// direct-model prediction per channel
    pub noiseless: Vec<f64>,
    /// force-balance prediction per channel
    pub noiseless_gs: Vec<f64>,
    pub noise_seed: Option<u64>,
    pub perturbation: Option<Blob>,
    pub iterations: usize,
    /// largest beam-current change of the last update, relative to the target current
    pub residual: f64,
}

impl SyntheticMachine {
    /// A posterior over the layout with bounds wide enough for any state, used for forward runs.
    fn forward(&self, data: DiagnosticSet) -> Result<Posterior> {
        let wide = (-1.0e300, 1.0e300);
        let bounds = PriorBounds {
            beam_current: wide,
            p_c: [wide; 4],
            f_c: [wide; 3],
            psi_gamma: wide,
            biases: vec![wide; data.bias_groups],
            passive_current: wide,
            sigma_star_sq: SIGMA_STAR_SQ_BOUNDS,
        };
        let space = crate::inference::ParameterSpace::new(
            &bounds,
            self.ops.n_plasma(),
            self.ops.n_passive(),
            self.machine.f_boundary,
        )?;
        Posterior::new(space, self.ops.clone(), data)
    }

    /// Direct and force-balance predictions of `state` for every channel.
    pub fn predictions(&self, state: &EquilibriumState) -> Result<(Vec<f64>, Vec<f64>)> {
        let post = self.forward(self.layout.clone())?;
        let psi = post.psi_dense(state);
        let j = post.j_gs(state, &psi);
        let pairs = post.predict_all(state, &psi, &j)?;
        Ok(pairs.iter().map(|p| (p.direct, p.gs)).unzip())
    }
}

/// Picard iteration to a force-balance state carrying `cfg.target_current`.
pub fn generate_gs_truth(sm: &SyntheticMachine, cfg: &SyntheticConfig) -> Result<TruthRecord> {
    cfg.validate()?;
    let sol = solve_force_balance(&sm.ops, &sm.passive_currents, &cfg.solve_settings())?;
    let Solution { currents, profile, psi_gamma, psi_axis, alpha, iterations, residual } = sol;
    let mut state = EquilibriumState {
        beam_currents: currents,
        profile,
        psi_gamma,
        sigma_star_sq: SIGMA_STAR_SQ_BOUNDS.0,
        biases: vec![0.0; sm.layout.bias_groups],
        passive_currents: sm.passive_currents.clone(),
    };
    state.sigma_star_sq = floor_sigma_sq(sm, &state)?;
    let (noiseless, noiseless_gs) = sm.predictions(&state)?;
    Ok(TruthRecord {
        state,
        psi_axis,
        alpha,
        shape: cfg.shape,
        noiseless,
        noiseless_gs,
        noise_seed: None,
        perturbation: None,
        iterations,
        residual,
    })
}

/// Mean square ΔI (kA²) of a state, clamped to the σ*² prior range.
pub fn floor_sigma_sq(sm: &SyntheticMachine, state: &EquilibriumState) -> Result<f64> {
    let d = delta_i(sm, state)?;
    let ms = d.iter().map(|v| (v * 1e-3).powi(2)).sum::<f64>() / d.len() as f64;
    Ok(ms.clamp(SIGMA_STAR_SQ_BOUNDS.0, SIGMA_STAR_SQ_BOUNDS.1))
}

/// Per-beam `ΔI` (A) of a state.
pub fn delta_i(sm: &SyntheticMachine, state: &EquilibriumState) -> Result<Vec<f64>> {
    let post = sm.forward(sm.layout.clone())?;
    let psi = post.psi_dense(state);
    let j = post.j_gs(state, &psi);
    Ok(post.delta_i(state, &j))
}

/// Adds a Gaussian current blob integrating to `blob.amplitude`; nothing else changes.
pub fn perturb_truth(sm: &SyntheticMachine, record: &TruthRecord, blob: Blob) -> Result<TruthRecord> {
    if !(blob.radius > 0.0) {
        return Err(Error::Validation("blob radius must be positive".into()));
    }
    let mut out = record.clone();
    if blob.amplitude != 0.0 {
        let beams = &sm.ops.grids.inference;
        let w: Vec<f64> = beams
            .iter()
            .map(|b| {
                let d2 = (b.r_center - blob.r).powi(2) + (b.z_center - blob.z).powi(2);
                (-d2 / (2.0 * blob.radius * blob.radius)).exp() * b.area()
            })
            .collect();
        let total: f64 = w.iter().sum();
        for (c, wi) in out.state.beam_currents.iter_mut().zip(&w) {
            *c += blob.amplitude * wi / total;
        }
        let (d, g) = sm.predictions(&out.state)?;
        out.noiseless = d;
        out.noiseless_gs = g;
        out.state.sigma_star_sq = floor_sigma_sq(sm, &out.state)?;
    }
    out.perturbation = Some(blob);
    Ok(out)
}

/// Observations `x_i = F_i + N(0, σ_i²)` from the direct noiseless predictions.
pub fn synthesize_data(sm: &SyntheticMachine, record: &TruthRecord, noise_seed: u64) -> DiagnosticSet {
    let mut rng = rng::child(noise_seed, Stream::Noise);
    let mut data = sm.layout.clone();
    for (c, &x) in data.channels.iter_mut().zip(&record.noiseless) {
        let noise = if c.uncertainty > 0.0 {
            Normal::new(0.0, c.uncertainty).expect("finite sigma").sample(&mut rng)
        } else {
            0.0
        };
        c.observation = x + noise;
    }
    data
}

/// Prior bounds from the scales of a consistent truth: each polynomial coefficient may
/// contribute three times the largest true `p'` (or `f − f_b`) over the flux range, beam
/// currents span `[−2%, 10%]` of the target current.
pub fn suggested_bounds(record: &TruthRecord, target_current: f64) -> PriorBounds {
    use crate::profiles::{eval_f, eval_pprime};
    let s = &record.state;
    let (lo, hi) = (s.psi_gamma, record.psi_axis);
    let grid: Vec<f64> = (0..=64).map(|i| lo + (hi - lo) * i as f64 / 64.0).collect();
    let p_max = grid.iter().map(|&x| eval_pprime(&s.profile, x).abs()).fold(0.0, f64::max);
    let f_max = grid.iter().map(|&x| (eval_f(&s.profile, lo, x) - s.profile.f_boundary).abs()).fold(0.0, f64::max);
    let psi_scale = lo.abs().max(hi.abs());
    let sym = |v: f64| (-v, v);
    PriorBounds {
        beam_current: (-0.02 * target_current, 0.1 * target_current),
        p_c: std::array::from_fn(|k| sym(3.0 * p_max / psi_scale.powi(k as i32))),
        f_c: std::array::from_fn(|k| sym(3.0 * f_max / psi_scale.powi(k as i32 + 1))),
        psi_gamma: (lo - 0.3 * (hi - lo), lo + 0.3 * (hi - lo)),
        biases: vec![(-5e-3, 5e-3); s.biases.len()],
        passive_current: (-2.0e4, 2.0e4),
        sigma_star_sq: SIGMA_STAR_SQ_BOUNDS,
    }
}
