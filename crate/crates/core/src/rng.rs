//! Seeded generators split per consumer so each stream is reproducible on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent consumers of randomness within one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Dropout = 2,
    DataOrder = 3,
    Generate = 4,
}

pub type ExperimentRng = ChaCha8Rng;

/// Generator for `stream` under `seed`. Streams never overlap for a given seed.
pub fn stream(seed: u64, stream: Stream) -> ExperimentRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
