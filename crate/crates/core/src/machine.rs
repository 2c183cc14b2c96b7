//! Machine geometry and the linear response operators the forward models run on.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{ChannelKind, DiagnosticSet};
use crate::error::{Error, Result};
use crate::magnetostatics::{field_response, flux_response, Beam, BeamGrid, BeamRole, FieldPoint, QuadSettings};
use crate::profiles::NestedGrids;

/// Machine-geometry document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineGeometry {
    pub name: String,
    /// Plasma beams (the inference grid), passive conductors and coils.
    pub grid: BeamGrid,
    /// Fixed currents of the coil beams, in grid order (A).
    pub coil_currents: Vec<f64>,
    /// Toroidal-field coil current term f(ψ_γ) (A).
    pub f_boundary: f64,
    /// Refinement of each inference beam into `dense_factor²` force-balance beams.
    #[serde(default = "default_dense_factor")]
    pub dense_factor: usize,
    #[serde(default)]
    pub quad: QuadSettings,
}

fn default_dense_factor() -> usize {
    2
}

impl MachineGeometry {
    pub fn beams_with(&self, role: BeamRole) -> Vec<Beam> {
        self.grid
            .beams
            .iter()
            .zip(&self.grid.labels)
            .filter(|(_, l)| **l == role)
            .map(|(b, _)| *b)
            .collect()
    }

    pub fn plasma(&self) -> Vec<Beam> {
        self.beams_with(BeamRole::Plasma)
    }

    pub fn passive(&self) -> Vec<Beam> {
        self.beams_with(BeamRole::PassiveConductor)
    }

    pub fn coils(&self) -> Vec<Beam> {
        self.beams_with(BeamRole::Coil)
    }

    pub fn nested_grids(&self) -> NestedGrids {
        NestedGrids::refined(self.plasma(), self.dense_factor)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.plasma().is_empty() {
            return Err(Error::Geometry("machine has no plasma beams".into()));
        }
        if self.coils().len() != self.coil_currents.len() {
            return Err(Error::Geometry(format!(
                "{} coil beams but {} coil currents",
                self.coils().len(),
                self.coil_currents.len()
            )));
        }
        if self.dense_factor == 0 {
            return Err(Error::Geometry("dense_factor must be at least 1".into()));
        }
        if !self.f_boundary.is_finite() {
            return Err(Error::Geometry("f_boundary is not finite".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let g: MachineGeometry = crate::io::read_json(path)?;
        g.validate()?;
        Ok(g)
    }
}

/// What one operator row measures.
#[derive(Debug, Clone, Copy, PartialEq)]
enum RowDef {
    Psi(FieldPoint),
    /// `B_R cos θ + B_Z sin θ`
    Pickup(FieldPoint, f64),
    BR(FieldPoint),
    BZ(FieldPoint),
}

/// Where each channel's linear prediction lives in the operator rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSpec {
    Linear(usize),
    Mse { br: usize, bz: usize, psi: usize },
    Total,
}

/// Response operators for one machine and channel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Operators {
    pub grids: NestedGrids,
    pub rows: Vec<RowSpec>,
    /// rows × plasma beams
    pub direct: Array2<f64>,
    /// rows × dense beams
    pub gs: Array2<f64>,
    /// rows × passive conductors
    pub passive: Array2<f64>,
    /// contribution of the fixed coil currents, per row
    pub external: Vec<f64>,
    /// ψ at dense-beam centres: dense × plasma, dense × passive, and the coil part
    pub dense_psi: Array2<f64>,
    pub dense_psi_passive: Array2<f64>,
    pub dense_psi_external: Vec<f64>,
    pub dense_areas: Vec<f64>,
}

fn row_value(def: RowDef, beam: &Beam, quad: &QuadSettings) -> Result<f64> {
    Ok(match def {
        RowDef::Psi(p) => flux_response(beam, p, quad)?,
        RowDef::Pickup(p, theta) => {
            let (br, bz) = field_response(beam, p, quad)?;
            br * theta.cos() + bz * theta.sin()
        }
        RowDef::BR(p) => field_response(beam, p, quad)?.0,
        RowDef::BZ(p) => field_response(beam, p, quad)?.1,
    })
}

fn assemble_row(def: RowDef, j: usize, beams: &[Beam], quad: &QuadSettings) -> Result<Vec<f64>> {
    beams
        .iter()
        .enumerate()
        .map(|(i, b)| {
            row_value(def, b, quad).map_err(|e| match e {
                Error::Singular { r, z, .. } => Error::Singular { point: j, beam: i, r, z },
                other => other,
            })
        })
        .collect()
}

fn assemble(defs: &[RowDef], beams: &[Beam], quad: &QuadSettings) -> Result<Array2<f64>> {
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        defs.par_iter()
            .enumerate()
            .map(|(j, d)| assemble_row(*d, j, beams, quad))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = defs
        .iter()
        .enumerate()
        .map(|(j, d)| assemble_row(*d, j, beams, quad))
        .collect::<Result<_>>()?;
    let mut m = Array2::zeros((defs.len(), beams.len()));
    for (j, row) in rows.into_iter().enumerate() {
        for (i, v) in row.into_iter().enumerate() {
            m[[j, i]] = v;
        }
    }
    Ok(m)
}

/// `out = m · x`, rows accumulated in a fixed order.
pub fn matvec_into(m: &Array2<f64>, x: &[f64], out: &mut [f64]) {
    assert_eq!(m.ncols(), x.len());
    assert_eq!(m.nrows(), out.len());
    for (o, row) in out.iter_mut().zip(m.rows()) {
        *o = match row.as_slice() {
            Some(r) => r.iter().zip(x).map(|(a, b)| a * b).sum(),
            None => row.iter().zip(x).map(|(a, b)| a * b).sum(),
        };
    }
}

/// `out += m · x`
pub fn matvec_add(m: &Array2<f64>, x: &[f64], out: &mut [f64]) {
    assert_eq!(m.ncols(), x.len());
    if x.is_empty() {
        return;
    }
    for (o, row) in out.iter_mut().zip(m.rows()) {
        let s: f64 = match row.as_slice() {
            Some(r) => r.iter().zip(x).map(|(a, b)| a * b).sum(),
            None => row.iter().zip(x).map(|(a, b)| a * b).sum(),
        };
        *o += s;
    }
}

fn row_layout(diag: &DiagnosticSet) -> (Vec<RowSpec>, Vec<RowDef>) {
    let mut specs = Vec::with_capacity(diag.channels.len());
    let mut defs = Vec::new();
    for c in &diag.channels {
        let p = c.position;
        match c.kind {
            ChannelKind::Pickup => {
                specs.push(RowSpec::Linear(defs.len()));
                defs.push(RowDef::Pickup(p, c.theta.unwrap_or(0.0)));
            }
            ChannelKind::Fluxloop => {
                specs.push(RowSpec::Linear(defs.len()));
                defs.push(RowDef::Psi(p));
            }
            ChannelKind::Mse => {
                specs.push(RowSpec::Mse { br: defs.len(), bz: defs.len() + 1, psi: defs.len() + 2 });
                defs.push(RowDef::BR(p));
                defs.push(RowDef::BZ(p));
                defs.push(RowDef::Psi(p));
            }
            ChannelKind::Rogowski => specs.push(RowSpec::Total),
        }
    }
    (specs, defs)
}

impl Operators {
    pub fn build(machine: &MachineGeometry, diag: &DiagnosticSet) -> Result<Self> {
        let quad = &machine.quad;
        let grids = machine.nested_grids();
        let passive = machine.passive();
        let coils = machine.coils();
        let (rows, defs) = row_layout(diag);
        let dense_defs: Vec<RowDef> =
            grids.dense.iter().map(|b| RowDef::Psi(FieldPoint::new(b.r_center, b.z_center))).collect();

        let direct = assemble(&defs, &grids.inference, quad)?;
        let gs = assemble(&defs, &grids.dense, quad)?;
        let passive_m = assemble(&defs, &passive, quad)?;
        let coil_m = assemble(&defs, &coils, quad)?;
        let mut external = vec![0.0; defs.len()];
        matvec_into(&coil_m, &machine.coil_currents, &mut external);

        let dense_psi = assemble(&dense_defs, &grids.inference, quad)?;
        let dense_psi_passive = assemble(&dense_defs, &passive, quad)?;
        let dense_coil = assemble(&dense_defs, &coils, quad)?;
        let mut dense_psi_external = vec![0.0; dense_defs.len()];
        matvec_into(&dense_coil, &machine.coil_currents, &mut dense_psi_external);
        let dense_areas = grids.dense.iter().map(Beam::area).collect();

        Ok(Operators {
            grids,
            rows,
            direct,
            gs,
            passive: passive_m,
            external,
            dense_psi,
            dense_psi_passive,
            dense_psi_external,
            dense_areas,
        })
    }

    pub fn n_plasma(&self) -> usize {
        self.grids.inference.len()
    }

    pub fn n_dense(&self) -> usize {
        self.grids.dense.len()
    }

    pub fn n_passive(&self) -> usize {
        self.passive.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.direct.nrows()
    }

    fn matrices(&self) -> [&Array2<f64>; 5] {
        [&self.direct, &self.gs, &self.passive, &self.dense_psi, &self.dense_psi_passive]
    }

    /// Binary image of the matrices and coil vectors, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CACHE_MAGIC.to_vec();
        for m in self.matrices() {
            out.extend((m.nrows() as u64).to_le_bytes());
            out.extend((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                out.extend(v.to_le_bytes());
            }
        }
        for v in [&self.external, &self.dense_psi_external] {
            out.extend((v.len() as u64).to_le_bytes());
            for x in v.iter() {
                out.extend(x.to_le_bytes());
            }
        }
        out
    }

    /// Inverse of [`Operators::to_bytes`]; `None` on any layout mismatch.
    pub fn from_bytes(machine: &MachineGeometry, diag: &DiagnosticSet, bytes: &[u8]) -> Option<Self> {
        let mut cur = bytes.strip_prefix(CACHE_MAGIC.as_slice())?;
        let take_u64 = |cur: &mut &[u8]| -> Option<u64> {
            let (h, t) = cur.split_first_chunk::<8>()?;
            *cur = t;
            Some(u64::from_le_bytes(*h))
        };
        let mut mats = Vec::with_capacity(5);
        for _ in 0..5 {
            let r = take_u64(&mut cur)? as usize;
            let c = take_u64(&mut cur)? as usize;
            let mut data = Vec::with_capacity(r * c);
            for _ in 0..r * c {
                data.push(f64::from_bits(take_u64(&mut cur)?));
            }
            mats.push(Array2::from_shape_vec((r, c), data).ok()?);
        }
        let mut vecs = Vec::with_capacity(2);
        for _ in 0..2 {
            let n = take_u64(&mut cur)? as usize;
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(f64::from_bits(take_u64(&mut cur)?));
            }
            vecs.push(v);
        }
        if !cur.is_empty() {
            return None;
        }
        let grids = machine.nested_grids();
        let (rows, defs) = row_layout(diag);
        let mut mats = mats.into_iter();
        let ops = Operators {
            dense_areas: grids.dense.iter().map(Beam::area).collect(),
            grids,
            rows,
            direct: mats.next()?,
            gs: mats.next()?,
            passive: mats.next()?,
            dense_psi: mats.next()?,
            dense_psi_passive: mats.next()?,
            dense_psi_external: vecs.pop()?,
            external: vecs.pop()?,
        };
        let shapes_ok = ops.direct.dim() == (defs.len(), ops.n_plasma())
            && ops.gs.dim() == (defs.len(), ops.n_dense())
            && ops.dense_psi.dim() == (ops.n_dense(), ops.n_plasma())
            && ops.passive.nrows() == defs.len()
            && ops.external.len() == defs.len()
            && ops.dense_psi_external.len() == ops.n_dense();
        shapes_ok.then_some(ops)
    }

    /// Loads operators from `cache_dir` when present, otherwise builds and stores them.
    pub fn cached(machine: &MachineGeometry, diag: &DiagnosticSet, cache_dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = cache_dir else {
            return Self::build(machine, diag);
        };
        let path = cache_path(dir, machine, diag);
        if let Ok(bytes) = std::fs::read(&path) {
            if let Some(ops) = Self::from_bytes(machine, diag, &bytes) {
                log::info!("response operators loaded from {}", path.display());
                return Ok(ops);
            }
            log::warn!("ignoring unreadable operator cache {}", path.display());
        }
        let ops = Self::build(machine, diag)?;
        crate::io::write_atomic(&path, &ops.to_bytes())?;
        Ok(ops)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"EQRSP001";

/// Content hash of everything the operators depend on.
pub fn geometry_hash(machine: &MachineGeometry, diag: &DiagnosticSet) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        machine: &'a MachineGeometry,
        channels: Vec<(ChannelKind, FieldPoint, Option<f64>)>,
    }
    let key = Key {
        machine,
        channels: diag.channels.iter().map(|c| (c.kind, c.position, c.theta)).collect(),
    };
    let bytes = serde_json::to_vec(&key).expect("serializable key");
    hex::encode(Sha256::digest(&bytes))
}

pub fn cache_path(dir: &Path, machine: &MachineGeometry, diag: &DiagnosticSet) -> PathBuf {
    dir.join(format!("{}.bin", geometry_hash(machine, diag)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::Channel;
    use std::collections::BTreeMap;

    pub(crate) fn tiny_machine() -> MachineGeometry {
        let mut beams = BeamGrid::rectangular((0.5, 0.9), (-0.2, 0.2), 2, 2, BeamRole::Plasma).unwrap().beams;
        let mut labels = vec![BeamRole::Plasma; beams.len()];
        beams.push(Beam::new(1.2, 0.0, 0.05, 0.05).unwrap());
        labels.push(BeamRole::PassiveConductor);
        beams.push(Beam::new(1.5, 0.6, 0.1, 0.1).unwrap());
        labels.push(BeamRole::Coil);
        MachineGeometry {
            name: "tiny".into(),
            grid: BeamGrid::new(beams, labels).unwrap(),
            coil_currents: vec![-5.0e4],
            f_boundary: 1.0e6,
            dense_factor: 2,
            quad: QuadSettings::default(),
        }
    }

    pub(crate) fn tiny_diagnostics() -> DiagnosticSet {
        let mk = |kind, r, z| Channel {
            name: format!("{kind:?}"),
            kind,
            position: FieldPoint::new(r, z),
            theta: Some(0.4),
            mse_geometry: Some([1.0, 0.1, 0.0, 0.0, 0.0, 1.0]),
            observation: 0.0,
            uncertainty: 1e-3,
            bias_index: None,
            weights: None,
        };
        DiagnosticSet {
            channels: vec![
                mk(ChannelKind::Pickup, 1.0, 0.4),
                mk(ChannelKind::Fluxloop, 1.1, -0.3),
                mk(ChannelKind::Mse, 0.7, 0.0),
                mk(ChannelKind::Rogowski, 0.0, 0.0),
            ],
            bias_groups: 0,
            weight_rules: BTreeMap::new(),
        }
    }

    #[test]
    fn layout_and_shapes() {
        let ops = Operators::build(&tiny_machine(), &tiny_diagnostics()).unwrap();
        assert_eq!(ops.rows, vec![RowSpec::Linear(0), RowSpec::Linear(1), RowSpec::Mse { br: 2, bz: 3, psi: 4 }, RowSpec::Total]);
        assert_eq!(ops.direct.dim(), (5, 4));
        assert_eq!(ops.gs.dim(), (5, 16));
        assert_eq!(ops.passive.dim(), (5, 1));
        assert_eq!(ops.dense_psi.dim(), (16, 4));
        assert!(ops.direct.iter().chain(ops.gs.iter()).chain(ops.dense_psi.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn dense_operator_matches_inference_operator_far_away() {
        // a point far from the plasma sees nearly the same field from a beam and its sub-beams
        let ops = Operators::build(&tiny_machine(), &tiny_diagnostics()).unwrap();
        for i in 0..ops.n_plasma() {
            let sum: f64 = (0..ops.n_dense()).filter(|&k| ops.grids.parent[k] == i).map(|k| ops.gs[[1, k]] / 4.0).sum();
            assert!((sum - ops.direct[[1, i]]).abs() < 2e-3 * ops.direct[[1, i]].abs());
        }
    }

    #[test]
    fn cache_round_trip() {
        let m = tiny_machine();
        let d = tiny_diagnostics();
        let dir = tempfile::tempdir().unwrap();
        let a = Operators::cached(&m, &d, Some(dir.path())).unwrap();
        assert!(cache_path(dir.path(), &m, &d).exists());
        let b = Operators::cached(&m, &d, Some(dir.path())).unwrap();
        assert_eq!(a, b);
        assert!(Operators::from_bytes(&m, &d, &a.to_bytes()[..100]).is_none());
        let mut m2 = m.clone();
        m2.coil_currents[0] = 1.0;
        assert_ne!(geometry_hash(&m, &d), geometry_hash(&m2, &d));
    }

    #[test]
    fn matvec_helpers() {
        let m = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut out = vec![0.0; 2];
        matvec_into(&m, &[1.0, 1.0], &mut out);
        assert_eq!(out, vec![3.0, 7.0]);
        matvec_add(&m, &[1.0, 0.0], &mut out);
        assert_eq!(out, vec![4.0, 10.0]);
    }
}
