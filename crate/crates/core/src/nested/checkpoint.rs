//! Resumable run state.
//!
//! The small state (pool, abscissa heap, chain statistics, stream positions, accumulator)
//! is a JSON header written atomically at `path`. Dead points go to an append-only binary
//! sidecar `path.dead`, one little-endian record `ln L, key, u[0..dim]` each. On resume the
//! sidecar is truncated to the record count stored in the header.

use std::fs::{self, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::abscissa::{AbscissaPool, AbscissaState};
use super::constrained::ChainState;
use super::staircase::Accumulator;
use super::{CheckpointSpec, CubeLikelihood, QuadraturePoint, RunParams, Sample, Sampler};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::{self, StreamPos};

const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub seed: u64,
    pub dim: usize,
    pub params: RunParams,
    pub pool: Vec<Sample>,
    pub maxima: Vec<Sample>,
    pub ln_t: Vec<f64>,
    #[serde(with = "crate::io::neg_inf_vec")]
    pub ln_mean_live: Vec<f64>,
    pub abscissa: AbscissaState,
    pub chains: ChainState,
    pub chain_rng: StreamPos,
    pub accumulator: Accumulator,
    pub dead_count: usize,
}

pub fn dead_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".dead");
    PathBuf::from(name)
}

fn encode(q: &QuadraturePoint, out: &mut Vec<u8>) {
    out.extend_from_slice(&q.log_l.to_le_bytes());
    out.extend_from_slice(&q.key.to_le_bytes());
    for x in &q.u {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Reads the first `count` records of a sidecar.
pub fn read_dead(path: &Path, dim: usize, count: usize) -> Result<Vec<QuadraturePoint>> {
    let file = dead_path(path);
    if !file.exists() {
        return Err(Error::MissingArtifact(file));
    }
    let mut bytes = Vec::new();
    fs::File::open(&file).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(&file, e))?;
    let rec = 8 * (dim + 2);
    if bytes.len() < rec * count {
        return Err(Error::Validation(format!(
            "{} holds {} records, header expects {count}",
            file.display(),
            bytes.len() / rec
        )));
    }
    let word = |i: usize| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().expect("8 bytes"));
    Ok((0..count)
        .map(|index| {
            let base = index * (dim + 2);
            QuadraturePoint {
                index,
                log_l: word(base),
                key: word(base + 1),
                u: (0..dim).map(|d| word(base + 2 + d)).collect(),
            }
        })
        .collect())
}

impl<'a, L: CubeLikelihood + ?Sized> Sampler<'a, L> {
    pub(crate) fn write_checkpoint(&mut self) -> Result<()> {
        let Some(spec) = self.checkpoint.clone() else { return Ok(()) };
        let side = dead_path(&spec.path);
        if let Some(dir) = side.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut buf = Vec::new();
        for q in &self.dead[self.persisted_dead..] {
            encode(q, &mut buf);
        }
        // a fresh run replaces whatever an earlier run left behind
        let fresh = self.persisted_dead == 0;
        let mut f = OpenOptions::new()
            .create(true)
            .append(!fresh)
            .write(true)
            .truncate(fresh)
            .open(&side)
            .map_err(|e| Error::io(&side, e))?;
        f.write_all(&buf).and_then(|_| f.sync_all()).map_err(|e| Error::io(&side, e))?;
        self.persisted_dead = self.dead.len();
        let header = Header {
            version: VERSION,
            seed: self.seed,
            dim: self.like.dim(),
            params: self.params.clone(),
            pool: self.pool.clone(),
            maxima: self.maxima.clone(),
            ln_t: self.ln_t.clone(),
            ln_mean_live: self.ln_mean_live.clone(),
            abscissa: self.abscissa.state(),
            chains: self.chains.clone(),
            chain_rng: rng::save(&self.chain_rng, self.seed),
            accumulator: self.acc,
            dead_count: self.dead.len(),
        };
        io::write_json(&spec.path, &header)?;
        log::debug!("checkpoint at iteration {}", self.dead.len());
        Ok(())
    }

    pub(crate) fn from_checkpoint(like: &'a L, spec: &CheckpointSpec) -> Result<Self> {
        let header: Header = io::read_json(&spec.path)?;
        if header.version != VERSION {
            return Err(Error::Validation(format!("checkpoint version {} is not supported", header.version)));
        }
        if header.dim != like.dim() {
            return Err(Error::Validation(format!(
                "checkpoint dimension {} does not match the model dimension {}",
                header.dim,
                like.dim()
            )));
        }
        let dead = read_dead(&spec.path, header.dim, header.dead_count)?;
        let side = dead_path(&spec.path);
        let rec = 8 * (header.dim + 2) as u64;
        OpenOptions::new()
            .write(true)
            .open(&side)
            .and_then(|f| f.set_len(rec * header.dead_count as u64))
            .map_err(|e| Error::io(&side, e))?;
        Ok(Sampler {
            like,
            params: header.params,
            seed: header.seed,
            pool: header.pool,
            maxima: header.maxima,
            dead,
            ln_t: header.ln_t,
            ln_mean_live: header.ln_mean_live,
            abscissa: AbscissaPool::restore(&header.abscissa),
            chains: header.chains,
            chain_rng: rng::restore(header.chain_rng),
            acc: header.accumulator,
            checkpoint: Some(spec.clone()),
            persisted_dead: header.dead_count,
        })
    }
}
