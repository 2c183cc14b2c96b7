//! Seeded, splittable random streams.
//!
//! Every stochastic sub-process draws from its own ChaCha stream derived from the run
//! seed, so changing how much randomness one component consumes never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifies a child stream of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    PoolInit,
    Abscissa(u32),
    Chains,
    Swarm,
    Resample,
    Noise,
    Synth,
    TieKeys,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::PoolInit => 1,
            Stream::Chains => 2,
            Stream::Swarm => 3,
            Stream::Resample => 4,
            Stream::Noise => 5,
            Stream::Synth => 6,
            Stream::TieKeys => 7,
            Stream::Abscissa(k) => 1_000 + k as u64,
        }
    }
}

/// Child generator for `stream` under `seed`.
pub fn child(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Serializable position of a child stream, used by checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPos {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

pub fn save(rng: &ChaCha8Rng, seed: u64) -> StreamPos {
    StreamPos {
        seed,
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos(),
    }
}

pub fn restore(pos: StreamPos) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(pos.seed);
    rng.set_stream(pos.stream);
    rng.set_word_pos(pos.word_pos);
    rng
}
