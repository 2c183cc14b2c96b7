//! Unit-current circular filament kernels.
//!
//! `ψ` is the total poloidal flux through the horizontal disk of radius `r`, so
//! `B_R = -(1/2πr) ∂ψ/∂z` and `B_Z = (1/2πr) ∂ψ/∂r`.

use std::f64::consts::PI;

use super::elliptic::{ellip_ke, flux_combination};
use super::MU_0;

/// Filament evaluation route.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Kernel {
    /// Complete elliptic integrals via AGM.
    Elliptic,
    /// Periodic trapezoid rule over the azimuth with the given node count.
    Azimuthal { nodes: usize },
}

/// Flux at `(r, z)` from a unit-current loop of radius `a` at height `za`.
#[inline]
pub fn loop_flux(a: f64, za: f64, r: f64, z: f64, kernel: Kernel) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    match kernel {
        Kernel::Elliptic => {
            let dz = z - za;
            let m = 4.0 * a * r / ((a + r) * (a + r) + dz * dz);
            MU_0 * (a * r / m).sqrt() * flux_combination(m)
        }
        Kernel::Azimuthal { nodes } => {
            let dz = z - za;
            let base = dz * dz + r * r + a * a;
            let h = 2.0 * PI / nodes as f64;
            let sum: f64 = (0..nodes)
                .map(|i| {
                    let phi = i as f64 * h;
                    let c = phi.cos();
                    c / (base - 2.0 * a * r * c).sqrt()
                })
                .sum();
            0.5 * MU_0 * a * r * sum * h
        }
    }
}

/// `(B_R, B_Z)` at `(r, z)` from a unit-current loop of radius `a` at height `za`.
#[inline]
pub fn loop_field(a: f64, za: f64, r: f64, z: f64, kernel: Kernel) -> (f64, f64) {
    let dz = z - za;
    match kernel {
        Kernel::Elliptic => {
            let scale = a.max(dz.abs());
            if r < 1e-7 * scale {
                // first order in r about the axis
                let d2 = a * a + dz * dz;
                let bz = MU_0 * a * a / (2.0 * d2 * d2.sqrt());
                let br = 0.75 * MU_0 * a * a * dz * r / (d2 * d2 * d2.sqrt());
                return (br, bz);
            }
            let s = a * a + r * r + dz * dz;
            let alpha2 = s - 2.0 * a * r;
            let beta2 = s + 2.0 * a * r;
            let beta = beta2.sqrt();
            let m = 4.0 * a * r / beta2;
            let (k, e) = ellip_ke(m);
            let c = MU_0 / PI;
            let br = c * dz / (2.0 * alpha2 * beta * r) * (s * e - alpha2 * k);
            let bz = c / (2.0 * alpha2 * beta) * ((a * a - r * r - dz * dz) * e + alpha2 * k);
            (br, bz)
        }
        Kernel::Azimuthal { nodes } => {
            let base = dz * dz + r * r + a * a;
            let h = 2.0 * PI / nodes as f64;
            let (mut sr, mut sz) = (0.0, 0.0);
            for i in 0..nodes {
                let c = (i as f64 * h).cos();
                let d = base - 2.0 * a * r * c;
                let inv3 = 1.0 / (d * d.sqrt());
                sr += c * inv3;
                sz += (a - r * c) * inv3;
            }
            let pre = MU_0 * a / (4.0 * PI) * h;
            (pre * dz * sr, pre * sz)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routes_agree_away_from_filament() {
        let az = Kernel::Azimuthal { nodes: 4096 };
        for &(r, z) in &[(0.5, 0.0), (1.5, 0.3), (0.2, -0.7), (2.5, 1.0)] {
            let e = loop_flux(1.0, 0.0, r, z, Kernel::Elliptic);
            let q = loop_flux(1.0, 0.0, r, z, az);
            assert!((e - q).abs() <= 1e-10 * e.abs(), "psi at ({r},{z})");
            let (ebr, ebz) = loop_field(1.0, 0.0, r, z, Kernel::Elliptic);
            let (qbr, qbz) = loop_field(1.0, 0.0, r, z, az);
            let mag = ebr.hypot(ebz);
            assert!((ebr - qbr).abs() <= 1e-10 * mag);
            assert!((ebz - qbz).abs() <= 1e-10 * mag);
        }
    }

    #[test]
    fn on_axis_field() {
        let (br, bz) = loop_field(1.0, 0.0, 1e-9, 0.0, Kernel::Elliptic);
        assert!(br.abs() < 1e-20);
        assert!((bz - MU_0 / 2.0).abs() / (MU_0 / 2.0) < 1e-12);
        // just above the series threshold
        let (_, bz) = loop_field(1.0, 0.0, 1e-5, 0.0, Kernel::Elliptic);
        assert!((bz - MU_0 / 2.0).abs() / (MU_0 / 2.0) < 1e-9);
    }
}
