//! File-level workflows behind the command-line tool: synthesize inputs, infer, report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diagnostics::{ChannelKind, DiagnosticSet};
use crate::equilibrium::{flat_start_settings, force_balance_start};
use crate::error::{Error, Result};
use crate::inference::{ParameterSpace, Posterior};
use crate::io;
use crate::machine::{MachineGeometry, Operators};
use crate::nested::{resume_nested, run_nested, CheckpointSpec, EvidenceResult, NestedRun, RunOptions, RunStats};
use crate::report::{build_report, RunReport};
use crate::synthetic::{build_machine, generate_gs_truth, perturb_truth, suggested_bounds, synthesize_data, SyntheticConfig};

pub const MACHINE_FILE: &str = "machine.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const RUN_TEMPLATE_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SAMPLES_FILE: &str = "samples.json";
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Environment variable naming the response-operator cache directory.
pub const CACHE_ENV: &str = "EQBAYES_CACHE_DIR";

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub perturb: bool,
    pub noise_seed: u64,
}

/// Writes machine, diagnostics, truth and a run-config template into `dir`. Prior bounds
/// always come from the consistent truth, so perturbed and consistent runs share priors.
pub fn synth(dir: &Path, cfg: &SyntheticConfig, options: &SynthOptions) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sm = build_machine(cfg)?;
    let consistent = generate_gs_truth(&sm, cfg)?;
    let bounds = suggested_bounds(&consistent, cfg.target_current);
    let mut truth = if options.perturb { perturb_truth(&sm, &consistent, cfg.blob)? } else { consistent };
    truth.noise_seed = Some(options.noise_seed);
    let data = synthesize_data(&sm, &truth, options.noise_seed);
    io::write_json(&dir.join(MACHINE_FILE), &sm.machine)?;
    io::write_json(&dir.join(DIAGNOSTICS_FILE), &data)?;
    io::write_json(&dir.join(TRUTH_FILE), &truth)?;
    let template = RunConfig::new(MACHINE_FILE.into(), DIAGNOSTICS_FILE.into(), "run".into(), bounds);
    let path = dir.join(RUN_TEMPLATE_FILE);
    io::write_json(&path, &template)?;
    Ok(path)
}

/// Posterior draws and the sampler summaries they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSamples {
    pub evidence: EvidenceResult,
    pub stats: RunStats,
    /// physical parameter vectors, one per resampled draw
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub operators_s: f64,
    pub sampling_s: f64,
    pub report_s: f64,
    pub total_s: f64,
}

fn load_posterior(cfg: &RunConfig, cache_dir: Option<&Path>) -> Result<Posterior> {
    let machine = MachineGeometry::load(&cfg.machine)?;
    let mut data = DiagnosticSet::load(&cfg.diagnostics)?;
    data.weight_rules.extend(cfg.weights.iter().map(|(k, v)| (*k, *v)));
    data.validate()?;
    let ops = Operators::cached(&machine, &data, cache_dir)?;
    let space = ParameterSpace::new(&cfg.bounds, ops.n_plasma(), ops.n_passive(), machine.f_boundary)?;
    Posterior::new(space, ops, data)
}

fn measured_current(data: &DiagnosticSet) -> Option<f64> {
    data.channels.iter().find(|c| c.kind == ChannelKind::Rogowski).map(|c| c.observation)
}

fn run_options(cfg: &RunConfig, post: &Posterior) -> RunOptions {
    let mut seed_starts = Vec::new();
    if cfg.seeding.is_some() && cfg.equilibrium_start {
        match measured_current(&post.data).filter(|ip| *ip > 0.0) {
            Some(ip) => match force_balance_start(post, &flat_start_settings(ip, post.space.f_boundary)) {
                Ok(u) => seed_starts.push(u),
                Err(e) => log::warn!("no force-balance starting point: {e}"),
            },
            None => log::warn!("no positive plasma-current measurement; skipping the force-balance start"),
        }
    }
    let checkpoint = (cfg.checkpoint_every > 0)
        .then(|| CheckpointSpec { path: cfg.output.join(CHECKPOINT_FILE), every: cfg.checkpoint_every });
    RunOptions { posterior_samples: cfg.posterior_samples, seeding: cfg.seeding.clone(), seed_starts, checkpoint }
}

fn write_outputs(dir: &Path, report: &RunReport) -> Result<()> {
    io::write_json(&dir.join(REPORT_FILE), report)?;
    for (name, bytes) in report.tables()? {
        io::write_atomic(&dir.join(name), &bytes)?;
    }
    Ok(())
}

/// Runs the sampler (or resumes it from the output directory's checkpoint) and writes
/// samples, report, tables and timing.
pub fn infer(cfg: &RunConfig, resume: bool, cache_dir: Option<&Path>) -> Result<RunReport> {
    let t0 = Instant::now();
    let out = &cfg.output;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    io::write_json(&out.join(CONFIG_FILE), cfg)?;
    let post = load_posterior(cfg, cache_dir)?;
    let t_ops = t0.elapsed().as_secs_f64();
    log::info!("posterior over {} parameters and {} channels", post.dim(), post.data.channels.len());
    let options = run_options(cfg, &post);
    let run: NestedRun = if resume {
        if options.checkpoint.is_none() {
            return Err(Error::Validation("resume needs checkpoint_every > 0".into()));
        }
        resume_nested(&post, &options)?
    } else {
        run_nested(&post, &cfg.run, cfg.seed, &options)?
    };
    let t_run = t0.elapsed().as_secs_f64();
    let samples: Vec<Vec<f64>> =
        run.posterior.resampled.iter().map(|&i| post.space.from_unit(&run.posterior.samples[i])).collect();
    let stored = StoredSamples { evidence: run.evidence.clone(), stats: run.stats.clone(), samples };
    io::write_json(&out.join(SAMPLES_FILE), &stored)?;
    let report = build_report(&post, &stored.samples, stored.evidence.clone(), stored.stats.clone(), cfg.profile_points)?;
    write_outputs(out, &report)?;
    let total = t0.elapsed().as_secs_f64();
    let timing = Timing { operators_s: t_ops, sampling_s: t_run - t_ops, report_s: total - t_run, total_s: total };
    io::write_json(&out.join(TIMING_FILE), &timing)?;
    Ok(report)
}

/// Rebuilds the report and tables of a finished run from its stored samples.
pub fn report(run_dir: &Path, cache_dir: Option<&Path>) -> Result<RunReport> {
    let need = |name: &str| {
        let p = run_dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(p))
        }
    };
    let mut cfg: RunConfig = io::read_json(&need(CONFIG_FILE)?)?;
    cfg.output = run_dir.to_path_buf();
    let stored: StoredSamples = io::read_json(&need(SAMPLES_FILE)?)?;
    let post = load_posterior(&cfg, cache_dir)?;
    if stored.samples.iter().any(|s| s.len() != post.dim()) {
        return Err(Error::Validation("stored samples do not match the parameter space".into()));
    }
    let mut report = build_report(&post, &stored.samples, stored.evidence, stored.stats, cfg.profile_points)?;
    // evaluation counts belong to the sampling run
    if let Ok(previous) = io::read_json::<RunReport>(&run_dir.join(REPORT_FILE)) {
        report.evaluations = previous.evaluations;
        report.degenerate_mse = previous.degenerate_mse;
    }
    write_outputs(run_dir, &report)?;
    Ok(report)
}
