//! Posterior summaries: current-density maps, flux map with the boundary contour,
//! profile curves and the σ*² statistics, all Monte-Carlo estimates over posterior samples.

use serde::{Deserialize, Serialize};

use crate::contour::{marching_squares, Lattice, Polyline};
use crate::error::{Error, Result};
use crate::inference::Posterior;
use crate::magnetostatics::MU_0;
use crate::nested::{EvidenceResult, RunStats};
use crate::profiles::{eval_f, eval_pressure};

/// Mean, spread and central 95% interval of a scalar over `n` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub lower95: f64,
    pub upper95: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n > 0, "statistic of an empty sample");
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| sorted[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        Stat { mean, std: var.sqrt(), lower95: q(0.025), upper95: q(0.975), n }
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

/// Per-inference-beam current densities (A/m²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamMaps {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub j_mean: Vec<f64>,
    pub j_std: Vec<f64>,
    /// beam average of the dense-grid force-balance density
    pub j_gs_mean: Vec<f64>,
    pub j_gs_std: Vec<f64>,
    pub dj_mean: Vec<f64>,
    pub dj_std: Vec<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxMap {
    pub lattice: Lattice,
    /// node order of `lattice`
    pub psi_mean: Vec<f64>,
    pub psi_std: Vec<f64>,
    pub psi_gamma_mean: f64,
    pub lcfs: Vec<Polyline>,
    pub lcfs_closed: bool,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurves {
    pub psi_bar: Vec<f64>,
    /// Pa
    pub pressure_mean: Vec<f64>,
    pub pressure_std: Vec<f64>,
    /// A
    pub f_mean: Vec<f64>,
    pub f_std: Vec<f64>,
    /// flux-surface safety-factor proxy on contours of the mean flux; absent where no
    /// closed contour exists
    pub q_proxy: Vec<Option<f64>>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub evidence: EvidenceResult,
    pub sampler: RunStats,
    pub sigma_star_sq: Stat,
    pub psi_gamma: Stat,
    pub total_current: Stat,
    /// plasma-mean `ΔJ` over beams with positive mean `J_GS`, relative to the peak mean `J`
    pub relative_mean_dj: f64,
    pub beams: BeamMaps,
    pub flux: FluxMap,
    pub profiles: ProfileCurves,
    pub evaluations: u64,
    pub degenerate_mse: u64,
}

/// Intermediate products of one posterior sample.
struct SampleProducts {
    psi_dense: Vec<f64>,
    j: Vec<f64>,
    j_gs_beam: Vec<f64>,
    dj: Vec<f64>,
}

fn products(post: &Posterior, x: &[f64]) -> SampleProducts {
    let s = post.space.from_vector(x);
    let psi_dense = post.psi_dense(&s);
    let j_gs = post.j_gs(&s, &psi_dense);
    let delta_i = post.delta_i(&s, &j_gs);
    let grids = &post.ops.grids;
    let areas: Vec<f64> = grids.inference.iter().map(|b| b.area()).collect();
    let mut j_gs_beam = vec![0.0; areas.len()];
    for ((k, &p), a) in grids.parent.iter().enumerate().zip(&post.ops.dense_areas) {
        j_gs_beam[p] += j_gs[k] * a;
    }
    j_gs_beam.iter_mut().zip(&areas).for_each(|(v, a)| *v /= a);
    let j = s.beam_currents.iter().zip(&areas).map(|(i, a)| i / a).collect();
    let dj = delta_i.iter().zip(&areas).map(|(d, a)| d / a).collect();
    SampleProducts { psi_dense, j, j_gs_beam, dj }
}

/// Columnwise mean and sample standard deviation.
fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let width = rows[0].len();
    let mut mean = vec![0.0; width];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut var = vec![0.0; width];
    if n > 1 {
        for r in rows {
            var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2) / (n - 1) as f64);
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

/// Mean and spread of the dense-grid ψ with the `ψ = E[ψ_γ]` contour.
pub fn flux_map_and_lcfs(post: &Posterior, samples: &[Vec<f64>]) -> Result<FluxMap> {
    if samples.len() < 2 {
        return Err(Error::Validation("a flux map needs at least two samples".into()));
    }
    let lattice = Lattice::from_beams(&post.ops.grids.dense)?;
    let psis: Vec<Vec<f64>> = samples.iter().map(|x| post.psi_dense(&post.space.from_vector(x))).collect();
    Ok(flux_map_from(&lattice, &psis, samples.iter().map(|x| x[post.space.layout.psi_gamma]).collect()))
}

fn flux_map_from(lattice: &Lattice, psis: &[Vec<f64>], psi_gammas: Vec<f64>) -> FluxMap {
    let (mean, std) = column_stats(psis);
    let psi_mean = lattice.nodes(&mean);
    let psi_std = lattice.nodes(&std);
    let psi_gamma_mean = psi_gammas.iter().sum::<f64>() / psi_gammas.len() as f64;
    let lcfs = marching_squares(lattice, &psi_mean, psi_gamma_mean);
    let lcfs_closed = !lcfs.is_empty() && lcfs.iter().all(|c| c.closed);
    if !lcfs_closed {
        log::warn!("boundary contour is open: it leaves the dense grid");
    }
    FluxMap { lattice: lattice.clone(), psi_mean, psi_std, psi_gamma_mean, lcfs, lcfs_closed, n: psis.len() }
}

/// Central-difference gradient of node values, one-sided at the lattice edge.
fn gradient(lat: &Lattice, nodes: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (nr, nz) = (lat.nr(), lat.nz());
    let at = |i: usize, j: usize| nodes[j * nr + i];
    let diff = |axis: &[f64], k: usize, f: &dyn Fn(usize) -> f64| {
        let n = axis.len();
        if n < 2 {
            return 0.0;
        }
        let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
        (f(b) - f(a)) / (axis[b] - axis[a])
    };
    let mut gr = vec![0.0; nodes.len()];
    let mut gz = vec![0.0; nodes.len()];
    for j in 0..nz {
        for i in 0..nr {
            gr[j * nr + i] = diff(&lat.r, i, &|k| at(k, j));
            gz[j * nr + i] = diff(&lat.z, j, &|k| at(i, k));
        }
    }
    (gr, gz)
}

/// `q ≈ (1/2π) ∮ B_φ / (R B_pol) dl` on the closed contour `ψ = level`, with
/// `B_pol = |∇ψ| / 2πR` and `B_φ = μ0 f / 2πR`.
fn q_on_contour(lat: &Lattice, psi: &[f64], grad: &(Vec<f64>, Vec<f64>), level: f64, f: f64) -> Option<f64> {
    let curves = marching_squares(lat, psi, level);
    let c = curves.iter().filter(|c| c.closed).max_by(|a, b| a.length().total_cmp(&b.length()))?;
    let mut integral = 0.0;
    for w in c.points.windows(2) {
        let (r, z) = (0.5 * (w[0].0 + w[1].0), 0.5 * (w[0].1 + w[1].1));
        let dl = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        let g = lat.interpolate(&grad.0, r, z).hypot(lat.interpolate(&grad.1, r, z));
        if g <= 0.0 {
            return None;
        }
        integral += MU_0 * f / (r * g) * dl;
    }
    Some(integral / (2.0 * std::f64::consts::PI))
}

/// Pressure and f against normalized flux, sample by sample, plus the q proxy.
pub fn profile_curves(post: &Posterior, samples: &[Vec<f64>], flux: &FluxMap, points: usize) -> ProfileCurves {
    let points = points.max(2);
    let psi_bar: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let mut pressure = Vec::with_capacity(samples.len());
    let mut f = Vec::with_capacity(samples.len());
    for x in samples {
        let s = post.space.from_vector(x);
        let axis = post.psi_dense(&s).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let at = |t: f64| s.psi_gamma + t * (axis - s.psi_gamma);
        pressure.push(psi_bar.iter().map(|&t| eval_pressure(&s.profile, s.psi_gamma, at(t))).collect());
        f.push(psi_bar.iter().map(|&t| eval_f(&s.profile, s.psi_gamma, at(t))).collect());
    }
    let (pressure_mean, pressure_std) = column_stats(&pressure);
    let (f_mean, f_std) = column_stats(&f);
    let lat = &flux.lattice;
    let grad = gradient(lat, &flux.psi_mean);
    let axis = flux.psi_mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let q_proxy = psi_bar
        .iter()
        .zip(&f_mean)
        .map(|(&t, &fv)| {
            if t <= 0.0 || t >= 1.0 {
                return None;
            }
            q_on_contour(lat, &flux.psi_mean, &grad, flux.psi_gamma_mean + t * (axis - flux.psi_gamma_mean), fv)
        })
        .collect();
    ProfileCurves { psi_bar, pressure_mean, pressure_std, f_mean, f_std, q_proxy, n: samples.len() }
}

/// Summaries over posterior samples given in physical parameter vectors.
pub fn build_report(
    post: &Posterior,
    samples: &[Vec<f64>],
    evidence: EvidenceResult,
    sampler: RunStats,
    profile_points: usize,
) -> Result<RunReport> {
    let flux = flux_map_and_lcfs(post, samples)?;
    let l = &post.space.layout;
    let sigma: Vec<f64> = samples.iter().map(|x| x[l.sigma_star_sq]).collect();
    let psi_gamma: Vec<f64> = samples.iter().map(|x| x[l.psi_gamma]).collect();
    let total: Vec<f64> = samples.iter().map(|x| x[l.beams.clone()].iter().sum()).collect();
    let prods: Vec<SampleProducts> = samples.iter().map(|x| products(post, x)).collect();
    let col = |f: fn(&SampleProducts) -> &Vec<f64>| column_stats(&prods.iter().map(|p| f(p).clone()).collect::<Vec<_>>());
    let (j_mean, j_std) = col(|p| &p.j);
    let (j_gs_mean, j_gs_std) = col(|p| &p.j_gs_beam);
    let (dj_mean, dj_std) = col(|p| &p.dj);
    debug_assert!(prods.iter().all(|p| !p.psi_dense.is_empty()));
    let peak = j_mean.iter().copied().fold(0.0, f64::max);
    let inside: Vec<f64> = dj_mean.iter().zip(&j_gs_mean).filter(|(_, g)| **g > 0.0).map(|(d, _)| *d).collect();
    let relative_mean_dj =
        if inside.is_empty() || peak <= 0.0 { f64::NAN } else { inside.iter().sum::<f64>() / inside.len() as f64 / peak };
    let inference = &post.ops.grids.inference;
    let beams = BeamMaps {
        r: inference.iter().map(|b| b.r_center).collect(),
        z: inference.iter().map(|b| b.z_center).collect(),
        j_mean,
        j_std,
        j_gs_mean,
        j_gs_std,
        dj_mean,
        dj_std,
        n: samples.len(),
    };
    let profiles = profile_curves(post, samples, &flux, profile_points);
    Ok(RunReport {
        evidence,
        sampler,
        sigma_star_sq: Stat::of(&sigma),
        psi_gamma: Stat::of(&psi_gamma),
        total_current: Stat::of(&total),
        relative_mean_dj,
        beams,
        flux,
        profiles,
        evaluations: post.evaluations(),
        degenerate_mse: post.degenerate_mse_count(),
    })
}

impl RunReport {
    /// CSV tables: name and bytes.
    pub fn tables(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        use crate::io::csv_bytes;
        let b = &self.beams;
        let beam_rows = |mean: &[f64], std: &[f64]| -> Vec<Vec<f64>> {
            (0..b.r.len()).map(|i| vec![b.r[i], b.z[i], mean[i], std[i]]).collect()
        };
        let head = ["r", "z", "mean", "std"];
        let lat = &self.flux.lattice;
        let flux_rows: Vec<Vec<f64>> = (0..lat.nz())
            .flat_map(|j| {
                (0..lat.nr()).map(move |i| (i, j))
            })
            .map(|(i, j)| {
                let k = j * lat.nr() + i;
                vec![lat.r[i], lat.z[j], self.flux.psi_mean[k], self.flux.psi_std[k]]
            })
            .collect();
        let lcfs_rows: Vec<Vec<f64>> = self
            .flux
            .lcfs
            .iter()
            .enumerate()
            .flat_map(|(c, line)| line.points.iter().map(move |(r, z)| vec![c as f64, *r, *z]))
            .collect();
        let p = &self.profiles;
        let profile_rows: Vec<Vec<f64>> = (0..p.psi_bar.len())
            .map(|i| {
                vec![
                    p.psi_bar[i],
                    p.pressure_mean[i],
                    p.pressure_std[i],
                    p.f_mean[i],
                    p.f_std[i],
                    p.q_proxy[i].unwrap_or(f64::NAN),
                ]
            })
            .collect();
        Ok(vec![
            ("j_map.csv", csv_bytes(&head, beam_rows(&b.j_mean, &b.j_std))?),
            ("j_gs_map.csv", csv_bytes(&head, beam_rows(&b.j_gs_mean, &b.j_gs_std))?),
            ("dj_map.csv", csv_bytes(&head, beam_rows(&b.dj_mean, &b.dj_std))?),
            ("flux_map.csv", csv_bytes(&["r", "z", "psi_mean", "psi_std"], flux_rows)?),
            ("lcfs.csv", csv_bytes(&["curve", "r", "z"], lcfs_rows)?),
            (
                "profiles.csv",
                csv_bytes(&["psi_bar", "pressure_mean", "pressure_std", "f_mean", "f_std", "q_proxy"], profile_rows)?,
            ),
        ])
    }
}
