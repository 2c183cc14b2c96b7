//! Run configuration: a JSON document, optionally edited by `key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diagnostics::{ChannelKind, WeightRule};
use crate::error::{Error, Result};
use crate::inference::PriorBounds;
use crate::nested::{RunParams, SeedBudget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// relative paths resolve against the directory holding the config file
    pub machine: PathBuf,
    pub diagnostics: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub run: RunParams,
    pub bounds: PriorBounds,
    /// per-kind weak-observation rules, replacing those stored with the diagnostics
    #[serde(default)]
    pub weights: BTreeMap<ChannelKind, WeightRule>,
    #[serde(default = "default_posterior_samples")]
    pub posterior_samples: usize,
    /// optimizer budget for seed maxima; `null` disables seeding
    #[serde(default = "default_seeding")]
    pub seeding: Option<SeedBudget>,
    /// also polish a force-balance state carrying the measured plasma current
    #[serde(default = "default_true")]
    pub equilibrium_start: bool,
    /// iterations between checkpoints; 0 disables them
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// rows of the profile table
    #[serde(default = "default_profile_points")]
    pub profile_points: usize,
}

fn default_posterior_samples() -> usize {
    1800
}

fn default_seeding() -> Option<SeedBudget> {
    Some(SeedBudget::default())
}

fn default_true() -> bool {
    true
}

fn default_checkpoint_every() -> usize {
    2000
}

fn default_profile_points() -> usize {
    41
}

impl RunConfig {
    /// Minimal config pointing at the given inputs, with every other key at its default.
    pub fn new(machine: PathBuf, diagnostics: PathBuf, output: PathBuf, bounds: PriorBounds) -> Self {
        RunConfig {
            machine,
            diagnostics,
            output,
            seed: 0,
            run: RunParams::default(),
            bounds,
            weights: BTreeMap::new(),
            posterior_samples: default_posterior_samples(),
            seeding: default_seeding(),
            equilibrium_start: true,
            checkpoint_every: default_checkpoint_every(),
            profile_points: default_profile_points(),
        }
    }

    /// Reads `path`, applies `overrides` in order, validates and resolves paths.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut doc: Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.machine, &mut cfg.diagnostics, &mut cfg.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        self.bounds.validate()?;
        for w in self.weights.values() {
            w.apply(1.0).validate()?;
        }
        if self.posterior_samples == 0 {
            return Err(Error::Validation("posterior_samples must be positive".into()));
        }
        if self.profile_points < 2 {
            return Err(Error::Validation("profile_points must be at least 2".into()));
        }
        Ok(())
    }
}

/// Parses a value as JSON, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

/// Sets the dotted key of `assignment` (`a.b.c=value`); array elements are addressed by
/// index and missing objects are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Validation(format!("override key `{key}` has an empty segment")));
    }
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert((*part).to_owned(), parse_value(raw));
                    return Ok(());
                }
                map.entry(*part).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .ok()
                    .filter(|&k| k < items.len())
                    .ok_or_else(|| Error::Validation(format!("override key `{key}`: no element `{part}`")))?;
                if last {
                    items[idx] = parse_value(raw);
                    return Ok(());
                }
                &mut items[idx]
            }
            _ => return Err(Error::Validation(format!("override key `{key}`: `{part}` is not inside an object"))),
        };
    }
    unreachable!("the loop returns at the last segment")
}
