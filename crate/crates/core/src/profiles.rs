//! Flux-function profiles, the force-balance current density and its discrepancy from
//! the beam-model current density.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::magnetostatics::{Beam, MU_0};

/// Polynomial profile coefficients in raw flux units (Wb).
///
/// `p'(ψ) = Σ p_c[k] ψ^k` and
/// `f(ψ) = f_boundary + Σ f_c[k-1] (ψ^k − ψ_γ^k)` for `k = 1..=3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileCoeffs {
    pub p_c: [f64; 4],
    pub f_c: [f64; 3],
    /// f at the boundary flux: the measured toroidal-field coil current (A).
    pub f_boundary: f64,
}

impl ProfileCoeffs {
    pub fn new(p_c: [f64; 4], f_c: [f64; 3], f_boundary: f64) -> Self {
        ProfileCoeffs { p_c, f_c, f_boundary }
    }

    pub fn is_finite(&self) -> bool {
        self.p_c.iter().chain(&self.f_c).all(|v| v.is_finite()) && self.f_boundary.is_finite()
    }
}

/// p'(ψ) in Pa/Wb.
pub fn eval_pprime(c: &ProfileCoeffs, psi: f64) -> f64 {
    let p = &c.p_c;
    p[0] + psi * (p[1] + psi * (p[2] + psi * p[3]))
}

/// p(ψ) in Pa, the antiderivative of p' with p(ψ_γ) = 0.
pub fn eval_pressure(c: &ProfileCoeffs, psi_gamma: f64, psi: f64) -> f64 {
    let p = &c.p_c;
    let anti = |x: f64| x * (p[0] + x * (p[1] / 2.0 + x * (p[2] / 3.0 + x * p[3] / 4.0)));
    anti(psi) - anti(psi_gamma)
}

/// f(ψ) in A.
pub fn eval_f(c: &ProfileCoeffs, psi_gamma: f64, psi: f64) -> f64 {
    let f = &c.f_c;
    let d1 = psi - psi_gamma;
    let d2 = psi * psi - psi_gamma * psi_gamma;
    let d3 = psi * psi * psi - psi_gamma * psi_gamma * psi_gamma;
    c.f_boundary + f[0] * d1 + f[1] * d2 + f[2] * d3
}

/// f'(ψ) in A/Wb.
pub fn eval_fprime(c: &ProfileCoeffs, psi: f64) -> f64 {
    let f = &c.f_c;
    f[0] + psi * (2.0 * f[1] + 3.0 * f[2] * psi)
}

/// Force-balance toroidal current density at major radius `r` (A/m²), zero outside the
/// last closed flux surface `ψ < ψ_γ`.
pub fn gs_point(c: &ProfileCoeffs, psi_gamma: f64, psi: f64, r: f64) -> f64 {
    if psi < psi_gamma {
        return 0.0;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    two_pi * r * eval_pprime(c, psi) + MU_0 / (two_pi * r) * eval_f(c, psi_gamma, psi) * eval_fprime(c, psi)
}

/// Which grid a current-density field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Inference,
    Dense,
}

/// Piecewise-constant current density, one value per beam of its grid (A/m²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentDensityField {
    pub grid: GridKind,
    pub values: Vec<f64>,
}

impl CurrentDensityField {
    /// From beam currents and beam areas.
    pub fn from_currents(grid: GridKind, currents: &[f64], beams: &[Beam]) -> Self {
        let values = currents.iter().zip(beams).map(|(i, b)| i / b.area()).collect();
        CurrentDensityField { grid, values }
    }

    pub fn integrate(&self, beams: &[Beam]) -> f64 {
        self.values.iter().zip(beams).map(|(j, b)| j * b.area()).sum()
    }
}

/// J_GS on every dense beam, R taken at the beam centre.
pub fn gs_current_density(c: &ProfileCoeffs, psi_gamma: f64, psi_dense: &[f64], dense: &[Beam]) -> CurrentDensityField {
    assert_eq!(psi_dense.len(), dense.len());
    let values = psi_dense
        .iter()
        .zip(dense)
        .map(|(&psi, b)| gs_point(c, psi_gamma, psi, b.r_center))
        .collect();
    CurrentDensityField { grid: GridKind::Dense, values }
}

/// Inference grid together with a dense grid nested inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedGrids {
    pub inference: Vec<Beam>,
    pub dense: Vec<Beam>,
    /// Index of the inference beam containing each dense beam.
    pub parent: Vec<usize>,
}

impl NestedGrids {
    pub fn new(inference: Vec<Beam>, dense: Vec<Beam>) -> Result<Self> {
        let parent = dense
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let hits: Vec<usize> = inference
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.contains_beam(d))
                    .map(|(i, _)| i)
                    .collect();
                match hits.as_slice() {
                    [one] => Ok(*one),
                    _ => Err(Error::GeometryMismatch { dense: k }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NestedGrids { inference, dense, parent })
    }

    /// Refines every inference beam `factor × factor` times.
    pub fn refined(inference: Vec<Beam>, factor: usize) -> Self {
        let mut dense = Vec::with_capacity(inference.len() * factor * factor);
        let mut parent = Vec::with_capacity(dense.capacity());
        for (i, b) in inference.iter().enumerate() {
            for d in b.refine(factor, factor) {
                dense.push(d);
                parent.push(i);
            }
        }
        NestedGrids { inference, dense, parent }
    }
}

/// Per-inference-beam `ΔI_i = ∫_{Ω_i} |J − J_GS|` (A) and the step function
/// `ΔJ = ΔI_i / area(Ω_i)` on the inference grid.
pub fn current_discrepancy(
    j: &CurrentDensityField,
    j_gs: &CurrentDensityField,
    grids: &NestedGrids,
) -> (Vec<f64>, CurrentDensityField) {
    let mut delta_i = vec![0.0; grids.inference.len()];
    discrepancy_into(&j.values, &j_gs.values, grids, &mut delta_i);
    let values = delta_i.iter().zip(&grids.inference).map(|(d, b)| d / b.area()).collect();
    (delta_i, CurrentDensityField { grid: GridKind::Inference, values })
}

/// Allocation-free core of [`current_discrepancy`].
pub(crate) fn discrepancy_into(j: &[f64], j_gs: &[f64], grids: &NestedGrids, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for ((k, d), &p) in grids.dense.iter().enumerate().zip(&grids.parent) {
        out[p] += (j[p] - j_gs[k]).abs() * d.area();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs(p: [f64; 4], f: [f64; 3]) -> ProfileCoeffs {
        ProfileCoeffs::new(p, f, 1.0e6)
    }

    #[test]
    fn pprime_examples() {
        assert_eq!(eval_pprime(&coeffs([0.0; 4], [0.0; 3]), 0.37), 0.0);
        assert_eq!(eval_pprime(&coeffs([1.0, 2.0, 0.0, 0.0], [0.0; 3]), 2.0), 5.0);
        assert_eq!(eval_pprime(&coeffs([0.0, 0.0, 0.0, 1.0], [0.0; 3]), -1.0), -1.0);
    }

    #[test]
    fn f_examples() {
        let c = coeffs([0.0; 4], [0.3, -2.0, 5.0]);
        assert_eq!(eval_f(&c, 0.4, 0.4), c.f_boundary);
        assert_eq!(eval_f(&coeffs([0.0; 4], [0.0; 3]), 0.1, 7.0), 1.0e6);
        assert_eq!(eval_f(&coeffs([0.0; 4], [1.0, 0.0, 0.0]), 0.0, 3.0), 1.0e6 + 3.0);
        assert_eq!(eval_fprime(&coeffs([0.0; 4], [0.0; 3]), 1.3), 0.0);
        assert_eq!(eval_fprime(&coeffs([0.0; 4], [0.0, 1.0, 0.0]), 2.0), 4.0);
    }

    #[test]
    fn pressure_examples() {
        let c = coeffs([1.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert_eq!(eval_pressure(&c, 0.0, 2.0), 2.0);
        assert_eq!(eval_pressure(&coeffs([3.0, -1.0, 2.0, 0.5], [0.0; 3]), 0.7, 0.7), 0.0);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let c = coeffs([1.2e4, -3.0e4, 2.0e4, 5.0e3], [2.0e5, -1.0e5, 4.0e4]);
        let psi_g = 0.21;
        for &psi in &[0.1, 0.35, 0.8] {
            let mut prev = f64::INFINITY;
            for &h in &[1e-2, 5e-3, 2.5e-3] {
                let fd_f = (eval_f(&c, psi_g, psi + h) - eval_f(&c, psi_g, psi - h)) / (2.0 * h);
                let fd_p = (eval_pressure(&c, psi_g, psi + h) - eval_pressure(&c, psi_g, psi - h)) / (2.0 * h);
                let err_f = (fd_f - eval_fprime(&c, psi)).abs();
                let err_p = (fd_p - eval_pprime(&c, psi)).abs();
                // central differences of polynomials err by exactly h² f'''/6
                assert!(err_f <= c.f_c[2].abs() * h * h * (1.0 + 1e-6) + 1e-6);
                let p3 = (2.0 * c.p_c[2] + 6.0 * c.p_c[3] * psi).abs() / 6.0;
                assert!(err_p <= p3 * h * h * (1.0 + 1e-6) + 1e-6);
                let err = err_f.max(1e-300);
                assert!(err < prev);
                prev = err;
            }
        }
    }

    #[test]
    fn gs_density_examples() {
        let b = Beam::new(1.0, 0.0, 0.1, 0.1).unwrap();
        let zero = coeffs([0.0; 4], [0.0; 3]);
        let f = gs_current_density(&zero, 0.1, &[0.5, 0.2], &[b, b]);
        assert!(f.values.iter().all(|&v| v == 0.0));

        let c = coeffs([1.0, 0.0, 0.0, 0.0], [0.0; 3]);
        let outside = gs_current_density(&c, 1.0, &[0.2, 0.9], &[b, b]);
        assert!(outside.values.iter().all(|&v| v == 0.0));

        let one = gs_current_density(&c, 0.0, &[1.0], &[b]);
        assert!((one.values[0] - 2.0 * std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn raw_flux_enters_polynomials() {
        // shifting ψ and ψ_γ by the same constant changes J_GS unless coefficients are
        // re-expressed
        let c = coeffs([1.0e4, 2.0e4, 0.0, 0.0], [1.0e5, 0.0, 0.0]);
        let a = gs_point(&c, 0.2, 0.5, 1.0);
        let b = gs_point(&c, 0.2 + 0.3, 0.5 + 0.3, 1.0);
        assert!((a - b).abs() > 1.0);
    }

    fn grids() -> NestedGrids {
        let inf = vec![Beam::new(1.0, 0.0, 0.2, 0.2).unwrap(), Beam::new(1.2, 0.0, 0.2, 0.2).unwrap()];
        NestedGrids::refined(inf, 2)
    }

    #[test]
    fn discrepancy_examples() {
        let g = grids();
        let currents = [3.0e3, 1.0e3];
        let j = CurrentDensityField::from_currents(GridKind::Inference, &currents, &g.inference);
        // J_GS equal to J pointwise
        let same = CurrentDensityField { grid: GridKind::Dense, values: g.parent.iter().map(|&p| j.values[p]).collect() };
        let (di, dj) = current_discrepancy(&j, &same, &g);
        assert!(di.iter().chain(&dj.values).all(|&v| v == 0.0));
        // J_GS = 0 gives ΔI = I
        let zero = CurrentDensityField { grid: GridKind::Dense, values: vec![0.0; g.dense.len()] };
        let (di, _) = current_discrepancy(&j, &zero, &g);
        assert!((di[0] - 3.0e3).abs() < 1e-9 && (di[1] - 1.0e3).abs() < 1e-9);
    }

    #[test]
    fn nesting_is_checked() {
        let inf = vec![Beam::new(1.0, 0.0, 0.2, 0.2).unwrap()];
        let straddle = vec![Beam::new(1.1, 0.0, 0.1, 0.1).unwrap()];
        assert!(matches!(NestedGrids::new(inf.clone(), straddle), Err(Error::GeometryMismatch { dense: 0 })));
        let inside = inf[0].refine(2, 2);
        let g = NestedGrids::new(inf, inside).unwrap();
        assert_eq!(g.parent, vec![0, 0, 0, 0]);
    }
}
