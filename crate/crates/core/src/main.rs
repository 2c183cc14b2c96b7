use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eqbayes::config::{apply_override, RunConfig};
use eqbayes::pipeline::{self, SynthOptions, CACHE_ENV};
use eqbayes::synthetic::SyntheticConfig;
use eqbayes::{io, Error, Result};

/// Bayesian equilibrium inference from magnetic and MSE diagnostics.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic machine, force-balance truth, noisy diagnostics and a run config
    Synth {
        /// output directory, created if missing
        #[arg(long)]
        out: PathBuf,
        /// synthetic-machine config (JSON); built-in defaults otherwise
        #[arg(long)]
        config: Option<PathBuf>,
        /// override a config key, e.g. `--set target_current=3e5`
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// add the configured current blob to the truth
        #[arg(long)]
        perturb: bool,
        #[arg(long, default_value_t = 7)]
        noise_seed: u64,
    },
    /// Run nested sampling and write the posterior report
    Infer {
        #[arg(long)]
        config: PathBuf,
        /// override a config key, e.g. `--set run.sizeSamplePool=50`
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// continue from the checkpoint in the output directory
        #[arg(long)]
        resume: bool,
    },
    /// Rebuild report and tables of a finished run from its stored samples
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn synth_config(path: Option<&Path>, overrides: &[String]) -> Result<SyntheticConfig> {
    let mut doc = match path {
        Some(p) => io::read_json::<serde_json::Value>(p)?,
        None => serde_json::to_value(SyntheticConfig::default()).expect("config serializes"),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: SyntheticConfig =
        serde_json::from_value(doc).map_err(|e| Error::json(path.unwrap_or(Path::new("<defaults>")), e))?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, config, overrides, perturb, noise_seed } => {
            let cfg = synth_config(config.as_deref(), &overrides)?;
            let template = pipeline::synth(&out, &cfg, &SynthOptions { perturb, noise_seed })?;
            println!("wrote {}", template.display());
        }
        Command::Infer { config, overrides, resume } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let cache = cache_dir();
            if let Some(dir) = &cache {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let report = pipeline::infer(&cfg, resume, cache.as_deref())?;
            let e = &report.evidence;
            println!("ln Z = {:.4} ± {:.4} (2σ), H = {:.3}", e.log_evidence_mean, e.log_evidence_2sigma, e.entropy);
            let s = &report.sigma_star_sq;
            println!("σ*² = {:.6e} kA², 95% [{:.6e}, {:.6e}], n = {}", s.mean, s.lower95, s.upper95, s.n);
            println!("results in {}", cfg.output.display());
        }
        Command::Report { run } => {
            let report = pipeline::report(&run, cache_dir().as_deref())?;
            println!("report rebuilt from {} samples in {}", report.sigma_star_sq.n, run.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Exhausted { checkpoint: Some(p), .. } = &e {
                eprintln!("resume with `infer --resume`; checkpoint at {}", p.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
