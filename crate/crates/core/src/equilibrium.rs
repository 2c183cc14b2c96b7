//! Fixed-point solution of force balance on the beam grid, and its use as a starting
//! point for posterior optimization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{EquilibriumState, Posterior};
use crate::machine::{matvec_add, Operators};
use crate::magnetostatics::Beam;
use crate::profiles::{gs_point, ProfileCoeffs};

/// Profile shape in normalized flux `ψ̄ = (ψ − ψ_γ)/(ψ_axis − ψ_γ)`:
/// `p' = α·pprime_scale·ψ̄^pprime_power` and `f' = α·fprime_scale·ψ̄^fprime_power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileShape {
    /// Pa/Wb
    pub pprime_scale: f64,
    pub pprime_power: u32,
    /// A/Wb
    pub fprime_scale: f64,
    pub fprime_power: u32,
}

impl Default for ProfileShape {
    fn default() -> Self {
        ProfileShape { pprime_scale: 1.0e5, pprime_power: 1, fprime_scale: 2.0e5, fprime_power: 1 }
    }
}

impl ProfileShape {
    /// Flat `p'` and `f'` with equal weight.
    pub const FLAT: ProfileShape = ProfileShape { pprime_scale: 1.0, pprime_power: 0, fprime_scale: 1.0, fprime_power: 0 };

    pub fn validate(&self) -> Result<()> {
        if self.pprime_power > 3 || self.fprime_power > 2 {
            return Err(Error::Validation("profile powers must keep p' and f within cubic polynomials".into()));
        }
        if !(self.pprime_scale >= 0.0 && self.fprime_scale >= 0.0) || self.pprime_scale + self.fprime_scale == 0.0 {
            return Err(Error::Validation("profile scales must be nonnegative and not both zero".into()));
        }
        Ok(())
    }

    /// Raw coefficients for amplitude `alpha`, boundary flux `psi_gamma` and flux range `delta`.
    pub fn coefficients(&self, alpha: f64, psi_gamma: f64, delta: f64, f_boundary: f64) -> ProfileCoeffs {
        let mut p_c = [0.0; 4];
        let n = self.pprime_power as usize;
        let a = alpha * self.pprime_scale / delta.powi(n as i32);
        for (k, c) in p_c.iter_mut().enumerate().take(n + 1) {
            *c = a * binomial(n, k) * (-psi_gamma).powi((n - k) as i32);
        }
        // f − f_b = c (ψ − ψ_γ)^q expanded on the basis ψ^k − ψ_γ^k
        let q = self.fprime_power as usize + 1;
        let c = alpha * self.fprime_scale / (q as f64 * delta.powi(q as i32 - 1));
        let mut f_c = [0.0; 3];
        for k in 1..=q {
            f_c[k - 1] = c * binomial(q, k) * (-psi_gamma).powi((q - k) as i32);
        }
        ProfileCoeffs::new(p_c, f_c, f_boundary)
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveSettings {
    pub shape: ProfileShape,
    /// A
    pub target_current: f64,
    /// A
    pub f_boundary: f64,
    /// `ψ_γ` sits at this fraction of the way from the axis flux to the edge flux
    pub boundary_fraction: f64,
    pub tol: f64,
    pub max_iterations: usize,
    /// weight of the new currents in each update
    pub relaxation: f64,
}

impl SolveSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.into()));
        if !(self.boundary_fraction > 0.0 && self.boundary_fraction < 1.0) {
            return bad("boundary_fraction must lie in (0, 1)");
        }
        if !(self.target_current > 0.0) {
            return bad("target_current must be positive");
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad("relaxation must lie in (0, 1]");
        }
        if !(self.tol > 0.0) || self.max_iterations == 0 {
            return bad("tol and max_iterations must be positive");
        }
        self.shape.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub currents: Vec<f64>,
    pub profile: ProfileCoeffs,
    pub psi_gamma: f64,
    pub psi_axis: f64,
    pub alpha: f64,
    pub iterations: usize,
    /// largest beam-current change of the last update, relative to the target current
    pub residual: f64,
}

/// Dense beams on the outer edge of the grid.
pub fn boundary_mask(dense: &[Beam]) -> Vec<bool> {
    let r_min = dense.iter().map(Beam::r_min).fold(f64::INFINITY, f64::min);
    let r_max = dense.iter().map(Beam::r_max).fold(f64::NEG_INFINITY, f64::max);
    let z_min = dense.iter().map(Beam::z_min).fold(f64::INFINITY, f64::min);
    let z_max = dense.iter().map(Beam::z_max).fold(f64::NEG_INFINITY, f64::max);
    let near = |a: f64, b: f64| (a - b).abs() < 1e-9;
    dense
        .iter()
        .map(|b| near(b.r_min(), r_min) || near(b.r_max(), r_max) || near(b.z_min(), z_min) || near(b.z_max(), z_max))
        .collect()
}

/// Axis flux and boundary flux of a dense ψ map; the edge flux is the lowest value on
/// the grid boundary.
pub fn flux_levels(psi: &[f64], edge_mask: &[bool], fraction: f64) -> (f64, f64) {
    let axis = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let edge = psi.iter().zip(edge_mask).filter(|(_, m)| **m).map(|(p, _)| *p).fold(f64::INFINITY, f64::min);
    (axis, axis + fraction * (edge - axis))
}

/// Parabolic currents centred on the grid, summing to `target`.
pub fn parabolic_start(beams: &[Beam], target: f64) -> Vec<f64> {
    let r_min = beams.iter().map(Beam::r_min).fold(f64::INFINITY, f64::min);
    let r_max = beams.iter().map(Beam::r_max).fold(f64::NEG_INFINITY, f64::max);
    let z_min = beams.iter().map(Beam::z_min).fold(f64::INFINITY, f64::min);
    let z_max = beams.iter().map(Beam::z_max).fold(f64::NEG_INFINITY, f64::max);
    let (r0, z0) = (0.5 * (r_min + r_max), 0.5 * (z_min + z_max));
    let (a, b) = (0.5 * (r_max - r_min), 0.5 * (z_max - z_min));
    let j: Vec<f64> = beams
        .iter()
        .map(|bm| {
            let rho2 = ((bm.r_center - r0) / a).powi(2) + ((bm.z_center - z0) / b).powi(2);
            (1.0 - rho2).max(0.0) * bm.area()
        })
        .collect();
    let total: f64 = j.iter().sum();
    j.iter().map(|v| v * target / total).collect()
}

/// Picard iteration to beam currents that reproduce themselves through force balance.
///
/// Each pass takes `ψ_γ` from the current flux map, then picks the profile amplitude that
/// carries the target current; `J = α·A + α²·B` since `f − f_b ∝ α`, so the amplitude is
/// the positive root of a quadratic.
pub fn solve_force_balance(ops: &Operators, passive_currents: &[f64], settings: &SolveSettings) -> Result<Solution> {
    settings.validate()?;
    let grids = &ops.grids;
    let edge_mask = boundary_mask(&grids.dense);
    let dense_r: Vec<f64> = grids.dense.iter().map(|b| b.r_center).collect();
    let target = settings.target_current;
    let mut currents = parabolic_start(&grids.inference, target);
    let mut residual = f64::INFINITY;
    let mut last = None;
    for it in 1..=settings.max_iterations {
        let mut psi = ops.dense_psi_external.clone();
        matvec_add(&ops.dense_psi, &currents, &mut psi);
        matvec_add(&ops.dense_psi_passive, passive_currents, &mut psi);
        let (axis, psi_gamma) = flux_levels(&psi, &edge_mask, settings.boundary_fraction);
        let delta = axis - psi_gamma;
        if !(delta > 0.0) {
            return Err(Error::Validation("flux map has no interior maximum".into()));
        }
        let unit = settings.shape.coefficients(1.0, psi_gamma, delta, settings.f_boundary);
        let flat = ProfileCoeffs { f_boundary: 0.0, ..unit };
        let no_f = ProfileCoeffs { f_c: [0.0; 3], ..unit };
        let mut ia = 0.0;
        let mut ib = 0.0;
        for ((&p, &r), &area) in psi.iter().zip(&dense_r).zip(&ops.dense_areas) {
            let quad = gs_point(&flat, psi_gamma, p, r) - gs_point(&no_f, psi_gamma, p, r);
            ia += (gs_point(&unit, psi_gamma, p, r) - quad) * area;
            ib += quad * area;
        }
        let alpha =
            if ib.abs() < 1e-12 * ia.abs() { target / ia } else { (-ia + (ia * ia + 4.0 * ib * target).sqrt()) / (2.0 * ib) };
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Validation("profile shape gives no positive plasma current".into()));
        }
        let profile = settings.shape.coefficients(alpha, psi_gamma, delta, settings.f_boundary);
        let mut fresh = vec![0.0; currents.len()];
        for (k, &parent) in grids.parent.iter().enumerate() {
            fresh[parent] += gs_point(&profile, psi_gamma, psi[k], dense_r[k]) * ops.dense_areas[k];
        }
        residual = currents.iter().zip(&fresh).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / target;
        let w = settings.relaxation;
        let converged = residual < settings.tol;
        if converged {
            currents = fresh;
        } else {
            currents.iter_mut().zip(&fresh).for_each(|(c, f)| *c = (1.0 - w) * *c + w * f);
        }
        last = Some((profile, psi_gamma, axis, alpha, it));
        if converged {
            break;
        }
    }
    let (profile, psi_gamma, psi_axis, alpha, iterations) = last.expect("at least one iteration");
    if residual >= settings.tol {
        return Err(Error::NoConvergence { iterations, residual });
    }
    Ok(Solution { currents, profile, psi_gamma, psi_axis, alpha, iterations, residual })
}

/// Settings for a generic starting equilibrium: flat profiles carrying `current`.
pub fn flat_start_settings(current: f64, f_boundary: f64) -> SolveSettings {
    SolveSettings {
        shape: ProfileShape::FLAT,
        target_current: current,
        f_boundary,
        boundary_fraction: 0.99,
        tol: 1e-6,
        max_iterations: 200,
        relaxation: 0.5,
    }
}

/// Unit-cube point of a force-balance solution, with passive currents and biases at zero
/// and `σ*²` at the geometric centre of its range. Coordinates are clamped into the prior
/// box.
pub fn force_balance_start(post: &Posterior, settings: &SolveSettings) -> Result<Vec<f64>> {
    let space = &post.space;
    let n_passive = space.layout.passive.len();
    let sol = solve_force_balance(&post.ops, &vec![0.0; n_passive], settings)?;
    let (lo, hi) = {
        let d = &space.params[space.layout.sigma_star_sq];
        (d.lower, d.upper)
    };
    let state = EquilibriumState {
        beam_currents: sol.currents,
        profile: sol.profile,
        psi_gamma: sol.psi_gamma,
        sigma_star_sq: (lo * hi).sqrt(),
        biases: vec![0.0; space.layout.biases.len()],
        passive_currents: vec![0.0; n_passive],
    };
    let mut x = space.to_vector(&state);
    for (v, d) in x.iter_mut().zip(&space.params) {
        *v = v.clamp(d.lower, d.upper);
    }
    Ok(space.to_unit(&x))
}
