//! Browser bindings: flux maps of current loops, nested sampling of a Gaussian and a small
//! force-balance equilibrium. Every entry point returns a JSON string.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use eqbayes::contour::{marching_squares, Lattice};
use eqbayes::machine::{matvec_add, matvec_into};
use eqbayes::magnetostatics::kernel::{loop_flux, Kernel};
use eqbayes::magnetostatics::{Beam, BeamGrid, BeamRole};
use eqbayes::nested::{run_nested, FnLikelihood, RunOptions, RunParams};
use eqbayes::synthetic::{build_machine, generate_gs_truth, ChannelLayout, SyntheticConfig};

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct Loop {
    pub r: f64,
    pub z: f64,
    /// kA
    pub current: f64,
}

#[derive(Debug, Serialize)]
pub struct Map {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    /// row-major, `z` outer
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub level: f64,
    pub closed: bool,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize)]
pub struct FluxPicture {
    pub psi: Map,
    pub contours: Vec<Curve>,
}

#[derive(Debug, Serialize)]
pub struct EvidenceSummary {
    pub ln_z: f64,
    pub ln_z_2sigma: f64,
    pub entropy: f64,
    pub iterations: usize,
    pub acceptance: f64,
    /// equal-weight posterior draws on the unit square
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize)]
pub struct Equilibrium {
    /// A/m² per inference beam
    pub j: Map,
    /// Wb on the dense grid
    pub psi: Map,
    pub lcfs: Vec<Curve>,
    pub psi_axis: f64,
    pub psi_gamma: f64,
    pub total_current: f64,
    pub iterations: usize,
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(js_err)
}

fn curves(lat: &Lattice, nodes: &[f64], level: f64) -> Vec<Curve> {
    marching_squares(lat, nodes, level)
        .into_iter()
        .map(|p| Curve { level, closed: p.closed, points: p.points })
        .collect()
}

fn map_of(lat: &Lattice, per_beam: &[f64]) -> Map {
    Map { r: lat.r.clone(), z: lat.z.clone(), values: lat.nodes(per_beam) }
}

/// ψ of a set of loops on an `nr × nz` lattice over `R ∈ [0.1, 2]`, `Z ∈ [-1, 1]`, with
/// `levels` evenly spaced contours.
pub fn loop_flux_picture(loops: &[Loop], nr: usize, nz: usize, levels: usize) -> eqbayes::Result<FluxPicture> {
    let beams = BeamGrid::rectangular((0.1, 2.0), (-1.0, 1.0), nr.max(2), nz.max(2), BeamRole::Plasma)?.beams;
    let lat = Lattice::from_beams(&beams)?;
    let psi: Vec<f64> = beams
        .iter()
        .map(|b| loops.iter().map(|l| 1e3 * l.current * loop_flux(l.r, l.z, b.r_center, b.z_center, Kernel::Elliptic)).sum())
        .collect();
    let (lo, hi) = psi.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let nodes = lat.nodes(&psi);
    let contours = (1..=levels)
        .flat_map(|k| curves(&lat, &nodes, lo + (hi - lo) * k as f64 / (levels + 1) as f64))
        .collect();
    Ok(FluxPicture { psi: map_of(&lat, &psi), contours })
}

/// Nested sampling of a normalized Gaussian of width `sigma` centred on the unit square.
pub fn gaussian_evidence(sigma: f64, pool: usize, seed: u64) -> eqbayes::Result<EvidenceSummary> {
    let s = sigma.clamp(0.01, 0.15);
    let like = FnLikelihood::new(2, move |u: &[f64]| {
        let r2 = (u[0] - 0.5).powi(2) + (u[1] - 0.5).powi(2);
        -r2 / (2.0 * s * s) - (2.0 * std::f64::consts::PI * s * s).ln()
    });
    let params = RunParams { size_sample_pool: pool.max(20), num_evidence_samples: 12, ..RunParams::default() };
    let run = run_nested(&like, &params, seed, &RunOptions { posterior_samples: 600, ..RunOptions::default() })?;
    let post = &run.posterior;
    Ok(EvidenceSummary {
        ln_z: run.evidence.log_evidence_mean,
        ln_z_2sigma: run.evidence.log_evidence_2sigma,
        entropy: run.evidence.entropy,
        iterations: run.stats.iterations,
        acceptance: run.stats.acceptance_rate,
        samples: post.resampled.iter().map(|&i| (post.samples[i][0], post.samples[i][1])).collect(),
    })
}

/// Force-balance state of a coarse synthetic machine carrying `current_ka`.
pub fn force_balance(current_ka: f64, boundary_fraction: f64) -> eqbayes::Result<Equilibrium> {
    let cfg = SyntheticConfig {
        nr: 7,
        nz: 9,
        channels: ChannelLayout { pickups: 8, flux_loops: 4, mse: 2, ..ChannelLayout::default() },
        target_current: 1e3 * current_ka.clamp(50.0, 800.0),
        boundary_fraction: boundary_fraction.clamp(0.5, 0.999),
        ..SyntheticConfig::default()
    };
    let sm = build_machine(&cfg)?;
    let truth = generate_gs_truth(&sm, &cfg)?;
    let ops = &sm.ops;
    let s = &truth.state;
    let mut psi = ops.dense_psi_external.clone();
    let mut tmp = vec![0.0; psi.len()];
    matvec_into(&ops.dense_psi, &s.beam_currents, &mut tmp);
    psi.iter_mut().zip(&tmp).for_each(|(p, t)| *p += t);
    matvec_add(&ops.dense_psi_passive, &s.passive_currents, &mut psi);
    let inference: &[Beam] = &ops.grids.inference;
    let j: Vec<f64> = s.beam_currents.iter().zip(inference).map(|(i, b)| i / b.area()).collect();
    let coarse = Lattice::from_beams(inference)?;
    let dense = Lattice::from_beams(&ops.grids.dense)?;
    let lcfs = curves(&dense, &dense.nodes(&psi), s.psi_gamma);
    Ok(Equilibrium {
        j: map_of(&coarse, &j),
        psi: map_of(&dense, &psi),
        lcfs,
        psi_axis: truth.psi_axis,
        psi_gamma: s.psi_gamma,
        total_current: s.beam_currents.iter().sum(),
        iterations: truth.iterations,
    })
}

#[wasm_bindgen(js_name = loopFluxMap)]
pub fn loop_flux_map(loops_json: &str, nr: usize, nz: usize, levels: usize) -> Result<String, JsValue> {
    let loops: Vec<Loop> = serde_json::from_str(loops_json).map_err(js_err)?;
    to_json(&loop_flux_picture(&loops, nr, nz, levels).map_err(js_err)?)
}

#[wasm_bindgen(js_name = gaussianEvidence)]
pub fn gaussian_evidence_js(sigma: f64, pool: usize, seed: u32) -> Result<String, JsValue> {
    to_json(&gaussian_evidence(sigma, pool, seed as u64).map_err(js_err)?)
}

#[wasm_bindgen(js_name = forceBalance)]
pub fn force_balance_js(current_ka: f64, boundary_fraction: f64) -> Result<String, JsValue> {
    to_json(&force_balance(current_ka, boundary_fraction).map_err(js_err)?)
}
