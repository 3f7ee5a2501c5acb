//! Named random sub-streams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Components that draw randomness. Each gets its own ChaCha stream so that
/// perturbing one leaves the others untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Embedding = 1,
    Tree = 2,
    Init = 3,
    Batching = 4,
    Synth = 5,
    Volume = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
