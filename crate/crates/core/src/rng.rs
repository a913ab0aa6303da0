//! Seeded random streams.
//!
//! Every stochastic stage draws from its own ChaCha stream derived from a
//! single run seed, so stages can be re-run independently and still agree.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SpearRng = ChaCha8Rng;

/// Named sub-streams of the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Split,
    Tsmote,
    Init,
    Shuffle,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Split => 2,
            Stream::Tsmote => 3,
            Stream::Init => 4,
            Stream::Shuffle => 5,
        }
    }
}

/// RNG seeded directly from `seed`.
pub fn rng_from_seed(seed: u64) -> SpearRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives the seed of a named sub-stream from the run seed.
pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng.next_u64()
}

/// Derives an independent per-item seed (e.g. per generated series).
pub fn item_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1 << 32));
    rng.next_u64()
}
