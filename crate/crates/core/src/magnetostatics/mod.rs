//! Axisymmetric current beams and the Biot-Savart response of flux and poloidal field
//! to unit beam currents.

pub mod elliptic;
pub mod kernel;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use kernel::Kernel;

/// Vacuum permeability, fixed at 4π×10⁻⁷ H/m.
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Points closer than this to a sub-filament are singular on the fixed-split path.
pub const EPS_GEO: f64 = 1e-9;

/// Rectangular-cross-section axisymmetric conductor carrying a uniform toroidal current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub r_center: f64,
    pub z_center: f64,
    pub width: f64,
    pub height: f64,
}

impl Beam {
    pub fn new(r_center: f64, z_center: f64, width: f64, height: f64) -> Result<Self> {
        let b = Beam { r_center, z_center, width, height };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0.0
            && self.height > 0.0
            && self.r_center.is_finite()
            && self.z_center.is_finite()
            && self.r_center - 0.5 * self.width > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Geometry(format!("bad beam {self:?}")))
        }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn r_min(&self) -> f64 {
        self.r_center - 0.5 * self.width
    }
    pub fn r_max(&self) -> f64 {
        self.r_center + 0.5 * self.width
    }
    pub fn z_min(&self) -> f64 {
        self.z_center - 0.5 * self.height
    }
    pub fn z_max(&self) -> f64 {
        self.z_center + 0.5 * self.height
    }

    /// Whether `other` lies entirely inside this beam (with a small tolerance).
    pub fn contains_beam(&self, other: &Beam) -> bool {
        let tol = 1e-9 * self.width.max(self.height);
        other.r_min() >= self.r_min() - tol
            && other.r_max() <= self.r_max() + tol
            && other.z_min() >= self.z_min() - tol
            && other.z_max() <= self.z_max() + tol
    }

    fn overlaps(&self, other: &Beam) -> bool {
        let tol = 1e-12;
        self.r_min() < other.r_max() - tol
            && other.r_min() < self.r_max() - tol
            && self.z_min() < other.z_max() - tol
            && other.z_min() < self.z_max() - tol
    }

    /// Distance from a point to the closed rectangle (0 inside).
    pub fn distance_to(&self, pt: FieldPoint) -> f64 {
        let dr = (self.r_min() - pt.r).max(0.0).max(pt.r - self.r_max());
        let dz = (self.z_min() - pt.z).max(0.0).max(pt.z - self.z_max());
        dr.hypot(dz)
    }

    /// Splits into `nr × nz` equal sub-beams, row-major in z then r.
    pub fn refine(&self, nr: usize, nz: usize) -> Vec<Beam> {
        let w = self.width / nr as f64;
        let h = self.height / nz as f64;
        let mut out = Vec::with_capacity(nr * nz);
        for j in 0..nz {
            for i in 0..nr {
                out.push(Beam {
                    r_center: self.r_min() + (i as f64 + 0.5) * w,
                    z_center: self.z_min() + (j as f64 + 0.5) * h,
                    width: w,
                    height: h,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamRole {
    Plasma,
    PassiveConductor,
    Coil,
}

/// Ordered beams; the order is the canonical index of the current vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamGrid {
    pub beams: Vec<Beam>,
    pub labels: Vec<BeamRole>,
}

impl BeamGrid {
    pub fn new(beams: Vec<Beam>, labels: Vec<BeamRole>) -> Result<Self> {
        let g = BeamGrid { beams, labels };
        g.validate()?;
        Ok(g)
    }

    pub fn uniform(beams: Vec<Beam>, role: BeamRole) -> Result<Self> {
        let labels = vec![role; beams.len()];
        Self::new(beams, labels)
    }

    /// `nr × nz` tiling of a rectangle, row-major in z then r.
    pub fn rectangular(
        r_range: (f64, f64),
        z_range: (f64, f64),
        nr: usize,
        nz: usize,
        role: BeamRole,
    ) -> Result<Self> {
        let outer = Beam {
            r_center: 0.5 * (r_range.0 + r_range.1),
            z_center: 0.5 * (z_range.0 + z_range.1),
            width: r_range.1 - r_range.0,
            height: z_range.1 - z_range.0,
        };
        outer.validate()?;
        Self::uniform(outer.refine(nr, nz), role)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beams.len() != self.labels.len() {
            return Err(Error::Geometry("label count differs from beam count".into()));
        }
        for b in &self.beams {
            b.validate()?;
        }
        let plasma: Vec<&Beam> = self
            .beams
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == BeamRole::Plasma)
            .map(|(b, _)| b)
            .collect();
        for (i, a) in plasma.iter().enumerate() {
            for b in &plasma[i + 1..] {
                if a.overlaps(b) {
                    return Err(Error::Geometry(format!("plasma beams overlap: {a:?} / {b:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldPoint {
    pub r: f64,
    pub z: f64,
}

impl FieldPoint {
    pub fn new(r: f64, z: f64) -> Self {
        debug_assert!(r >= 0.0);
        FieldPoint { r, z }
    }
}

/// How a beam cross-section is reduced to filaments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSettings {
    pub splits_r: usize,
    pub splits_z: usize,
    pub kernel: Kernel,
    /// Points closer than `near_field × max(width, height)` to a beam use adaptive
    /// subdivision instead of the fixed split. Zero disables it.
    pub near_field: f64,
    /// Adaptive cells are accepted once their distance exceeds this many half-diagonals.
    pub near_ratio: f64,
    /// Smallest adaptive cell, as a fraction of the beam size; below it the analytic
    /// small-filament limit is used.
    pub near_min_fraction: f64,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings {
            splits_r: 4,
            splits_z: 4,
            kernel: Kernel::Elliptic,
            near_field: 1.0,
            near_ratio: 3.0,
            near_min_fraction: 1e-4,
        }
    }
}

impl QuadSettings {
    pub fn with_splits(mut self, nr: usize, nz: usize) -> Self {
        self.splits_r = nr;
        self.splits_z = nz;
        self
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn far_only(mut self) -> Self {
        self.near_field = 0.0;
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    r: f64,
    z: f64,
    w: f64,
    h: f64,
}

/// Mean of `ln ρ` over a rectangle, with ρ measured from `pt`.
fn mean_ln_distance(cell: &Cell, pt: FieldPoint) -> f64 {
    fn h(x: f64, y: f64) -> f64 {
        if x == 0.0 || y == 0.0 {
            return 0.0;
        }
        x * y * (x * x + y * y).ln() - 3.0 * x * y + x * x * (y / x).atan() + y * y * (x / y).atan()
    }
    let x1 = cell.r - 0.5 * cell.w - pt.r;
    let x2 = x1 + cell.w;
    let y1 = cell.z - 0.5 * cell.h - pt.z;
    let y2 = y1 + cell.h;
    let integral = h(x2, y2) - h(x1, y2) - h(x2, y1) + h(x1, y1);
    0.5 * integral / (cell.w * cell.h)
}

/// Which quantity a kernel evaluation produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Psi,
    BR,
    BZ,
}

fn eval_kernel(q: Quantity, a: f64, za: f64, pt: FieldPoint, kernel: Kernel) -> [f64; 2] {
    match q {
        Quantity::Psi => [kernel::loop_flux(a, za, pt.r, pt.z, kernel), 0.0],
        _ => {
            let (br, bz) = kernel::loop_field(a, za, pt.r, pt.z, kernel);
            [br, bz]
        }
    }
}

fn adaptive(
    cell: Cell,
    weight: f64,
    pt: FieldPoint,
    q: Quantity,
    quad: &QuadSettings,
    min_diag: f64,
) -> [f64; 2] {
    let half_diag = 0.5 * cell.w.hypot(cell.h);
    let d = (cell.r - pt.r).hypot(cell.z - pt.z);
    if d > quad.near_ratio * half_diag {
        // 2×2 Gauss-Legendre
        let g = 0.5 / 3f64.sqrt();
        let mut acc = [0.0; 2];
        for (sr, sz) in [(-g, -g), (g, -g), (-g, g), (g, g)] {
            let v = eval_kernel(q, cell.r + sr * cell.w, cell.z + sz * cell.h, pt, quad.kernel);
            acc[0] += v[0];
            acc[1] += v[1];
        }
        return [0.25 * weight * acc[0], 0.25 * weight * acc[1]];
    }
    if half_diag < min_diag {
        return match q {
            // thin-ring limit: ψ ≈ μ0 I √(aR) [ln(8√(aR)/ρ) − 2], averaged over the cell
            Quantity::Psi if pt.r > 0.0 => {
                let g = (cell.r * pt.r).sqrt();
                let psi = MU_0 * weight * g * ((8.0 * g).ln() - 2.0 - mean_ln_distance(&cell, pt));
                [psi, 0.0]
            }
            // a vanishing cell contributes O(μ0 J size) to B
            _ => [0.0, 0.0],
        };
    }
    let (w, h) = (0.5 * cell.w, 0.5 * cell.h);
    let mut acc = [0.0; 2];
    for (dr, dz) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
        let sub = Cell { r: cell.r + dr * cell.w, z: cell.z + dz * cell.h, w, h };
        let v = adaptive(sub, 0.25 * weight, pt, q, quad, min_diag);
        acc[0] += v[0];
        acc[1] += v[1];
    }
    acc
}

fn beam_response(beam: &Beam, pt: FieldPoint, q: Quantity, quad: &QuadSettings) -> Result<[f64; 2]> {
    let size = beam.width.max(beam.height);
    if quad.near_field > 0.0 && beam.distance_to(pt) < quad.near_field * size {
        let cell = Cell { r: beam.r_center, z: beam.z_center, w: beam.width, h: beam.height };
        let min_diag = quad.near_min_fraction * size;
        return Ok(adaptive(cell, 1.0, pt, q, quad, min_diag));
    }
    let (nr, nz) = (quad.splits_r.max(1), quad.splits_z.max(1));
    let w = beam.width / nr as f64;
    let h = beam.height / nz as f64;
    let weight = 1.0 / (nr * nz) as f64;
    let mut acc = [0.0; 2];
    for j in 0..nz {
        let zf = beam.z_min() + (j as f64 + 0.5) * h;
        for i in 0..nr {
            let rf = beam.r_min() + (i as f64 + 0.5) * w;
            if (rf - pt.r).hypot(zf - pt.z) < EPS_GEO {
                return Err(Error::Singular { point: 0, beam: 0, r: pt.r, z: pt.z });
            }
            let v = eval_kernel(q, rf, zf, pt, quad.kernel);
            acc[0] += v[0];
            acc[1] += v[1];
        }
    }
    Ok([weight * acc[0], weight * acc[1]])
}

/// Flux at `pt` per ampere of uniformly distributed beam current (Wb/A).
pub fn flux_response(beam: &Beam, pt: FieldPoint, quad: &QuadSettings) -> Result<f64> {
    Ok(beam_response(beam, pt, Quantity::Psi, quad)?[0])
}

/// `(B_R, B_Z)` at `pt` per ampere of beam current (T/A).
pub fn field_response(beam: &Beam, pt: FieldPoint, quad: &QuadSettings) -> Result<(f64, f64)> {
    let v = beam_response(beam, pt, Quantity::BR, quad)?;
    Ok((v[0], v[1]))
}

/// Linear map from beam currents to a quantity at a list of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseOperator {
    pub quantity: Quantity,
    pub quad: QuadSettings,
    /// rows = field points, columns = beams
    pub matrix: Array2<f64>,
}

impl ResponseOperator {
    pub fn apply(&self, currents: &[f64]) -> Vec<f64> {
        let n = self.matrix.ncols();
        assert_eq!(currents.len(), n, "current vector length");
        self.matrix
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(currents).map(|(g, i)| g * i).sum())
            .collect()
    }
}

fn component(q: Quantity, v: [f64; 2]) -> f64 {
    match q {
        Quantity::Psi | Quantity::BR => v[0],
        Quantity::BZ => v[1],
    }
}

fn response_row(beams: &[Beam], pt: FieldPoint, j: usize, q: Quantity, quad: &QuadSettings) -> Result<Vec<f64>> {
    let kq = if q == Quantity::BZ { Quantity::BR } else { q };
    beams
        .iter()
        .enumerate()
        .map(|(i, b)| {
            beam_response(b, pt, kq, quad)
                .map(|v| component(q, v))
                .map_err(|e| match e {
                    Error::Singular { r, z, .. } => Error::Singular { point: j, beam: i, r, z },
                    other => other,
                })
        })
        .collect()
}

/// Entry `(j, i)` is the unit response of `quantity` at `pts[j]` to `beams[i]`.
pub fn build_response(
    beams: &[Beam],
    pts: &[FieldPoint],
    quantity: Quantity,
    quad: &QuadSettings,
) -> Result<ResponseOperator> {
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        pts.par_iter()
            .enumerate()
            .map(|(j, pt)| response_row(beams, *pt, j, quantity, quad))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = pts
        .iter()
        .enumerate()
        .map(|(j, pt)| response_row(beams, *pt, j, quantity, quad))
        .collect::<Result<_>>()?;

    let mut matrix = Array2::zeros((pts.len(), beams.len()));
    for (j, row) in rows.into_iter().enumerate() {
        for (i, v) in row.into_iter().enumerate() {
            matrix[[j, i]] = v;
        }
    }
    Ok(ResponseOperator { quantity, quad: *quad, matrix })
}

/// [`build_response`] over the beams of a grid.
pub fn build_grid_response(
    grid: &BeamGrid,
    pts: &[FieldPoint],
    quantity: Quantity,
    quad: &QuadSettings,
) -> Result<ResponseOperator> {
    build_response(&grid.beams, pts, quantity, quad)
}
