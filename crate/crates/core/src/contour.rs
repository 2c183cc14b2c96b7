//! Level curves of a scalar field on a rectilinear lattice by marching squares.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::magnetostatics::Beam;

/// Node coordinates of a rectilinear lattice; values are stored row-major, `z` outer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    /// position of each beam in the row-major node array
    pub node_of: Vec<usize>,
}

fn distinct(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    v
}

impl Lattice {
    /// Lattice through the centres of beams that tile a rectangle.
    pub fn from_beams(beams: &[Beam]) -> Result<Self> {
        let r = distinct(beams.iter().map(|b| b.r_center).collect());
        let z = distinct(beams.iter().map(|b| b.z_center).collect());
        if r.len() * z.len() != beams.len() {
            return Err(Error::Geometry("beam centres do not form a full lattice".into()));
        }
        let find = |axis: &[f64], v: f64| axis.iter().position(|a| (a - v).abs() < 1e-9).expect("present");
        let node_of = beams.iter().map(|b| find(&z, b.z_center) * r.len() + find(&r, b.r_center)).collect();
        Ok(Lattice { r, z, node_of })
    }

    pub fn nr(&self) -> usize {
        self.r.len()
    }

    pub fn nz(&self) -> usize {
        self.z.len()
    }

    /// Reorders per-beam values onto the lattice nodes.
    pub fn nodes(&self, per_beam: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; per_beam.len()];
        for (v, &k) in per_beam.iter().zip(&self.node_of) {
            out[k] = *v;
        }
        out
    }

    /// Bilinear interpolation of node values, clamped to the lattice.
    pub fn interpolate(&self, nodes: &[f64], r: f64, z: f64) -> f64 {
        let locate = |axis: &[f64], x: f64| {
            let n = axis.len();
            if n == 1 {
                return (0, 0, 0.0);
            }
            let i = axis.partition_point(|a| *a <= x).clamp(1, n - 1) - 1;
            let t = ((x - axis[i]) / (axis[i + 1] - axis[i])).clamp(0.0, 1.0);
            (i, i + 1, t)
        };
        let (i0, i1, tr) = locate(&self.r, r);
        let (j0, j1, tz) = locate(&self.z, z);
        let at = |i: usize, j: usize| nodes[j * self.nr() + i];
        let lo = at(i0, j0) * (1.0 - tr) + at(i1, j0) * tr;
        let hi = at(i0, j1) * (1.0 - tr) + at(i1, j1) * tr;
        lo * (1.0 - tz) + hi * tz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    /// (R, Z) vertices; a closed curve repeats its first vertex at the end
    pub points: Vec<(f64, f64)>,
    pub closed: bool,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt()).sum()
    }

    /// Signed enclosed area (shoelace), meaningful for closed curves.
    pub fn area(&self) -> f64 {
        0.5 * self.points.windows(2).map(|w| w[0].0 * w[1].1 - w[1].0 * w[0].1).sum::<f64>()
    }
}

/// Cell edge: `(horizontal?, i, j)` with node `(i, j)` at its lower or left end.
type Edge = (bool, usize, usize);

/// Curves where the field crosses `level`.
pub fn marching_squares(lat: &Lattice, nodes: &[f64], level: f64) -> Vec<Polyline> {
    let (nr, nz) = (lat.nr(), lat.nz());
    assert_eq!(nodes.len(), nr * nz);
    let v = |i: usize, j: usize| nodes[j * nr + i] - level;
    let point = |e: Edge| -> (f64, f64) {
        let (h, i, j) = e;
        let (a, b, pa, pb) = if h {
            (v(i, j), v(i + 1, j), (lat.r[i], lat.z[j]), (lat.r[i + 1], lat.z[j]))
        } else {
            (v(i, j), v(i, j + 1), (lat.r[i], lat.z[j]), (lat.r[i], lat.z[j + 1]))
        };
        let t = if a == b { 0.5 } else { (a / (a - b)).clamp(0.0, 1.0) };
        (pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1))
    };

    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..nz.saturating_sub(1) {
        for i in 0..nr.saturating_sub(1) {
            // corners anticlockwise from lower left; ≥ counts as above
            let c = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            let above: Vec<bool> = c.iter().map(|x| *x >= 0.0).collect();
            let edges: [Edge; 4] = [(true, i, j), (false, i + 1, j), (true, i, j + 1), (false, i, j)];
            let crossed: Vec<usize> = (0..4).filter(|&k| above[k] != above[(k + 1) % 4]).collect();
            match crossed.len() {
                2 => segments.push((edges[crossed[0]], edges[crossed[1]])),
                4 => {
                    // saddle: the centre value decides which corners connect
                    let centre_above = c.iter().sum::<f64>() / 4.0 >= 0.0;
                    if centre_above == above[0] {
                        segments.push((edges[0], edges[1]));
                        segments.push((edges[2], edges[3]));
                    } else {
                        segments.push((edges[3], edges[0]));
                        segments.push((edges[1], edges[2]));
                    }
                }
                _ => {}
            }
        }
    }

    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let other = |k: usize, e: Edge| if segments[k].0 == e { segments[k].1 } else { segments[k].0 };
    let next_from = |e: Edge, used: &[bool]| by_edge[&e].iter().copied().find(|&k| !used[k]);
    let mut lines = Vec::new();
    // open curves start at edges touched once; the rest are loops
    let mut starts: Vec<usize> = by_edge.values().filter(|s| s.len() == 1).map(|s| s[0]).collect();
    starts.sort_unstable();
    starts.extend(0..segments.len());
    for s in starts {
        if used[s] {
            continue;
        }
        let (a, b) = segments[s];
        let begin = if by_edge[&a].len() == 1 { a } else if by_edge[&b].len() == 1 { b } else { a };
        let mut chain = vec![begin];
        let mut cur = s;
        let mut edge = begin;
        loop {
            used[cur] = true;
            edge = other(cur, edge);
            chain.push(edge);
            match next_from(edge, &used) {
                Some(k) => cur = k,
                None => break,
            }
        }
        let closed = chain.len() > 2 && chain.first() == chain.last();
        lines.push(Polyline { points: chain.into_iter().map(point).collect(), closed });
    }
    lines
}
