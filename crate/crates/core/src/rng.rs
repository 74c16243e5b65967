//! Per-path random streams.
//!
//! Every path owns two ChaCha8 streams derived from the root seed and the path
//! index: one feeds the Brownian increments, the other the switching clock.
//! ChaCha is counter based, so stream `k` of a seed is a fixed function of
//! `(seed, k)` and a batch gives the same numbers for any worker count or
//! execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct PathStreams {
    pub noise: ChaCha8Rng,
    pub switching: ChaCha8Rng,
}

impl PathStreams {
    pub fn new(seed: u64, path_index: u64) -> Self {
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(path_index.wrapping_mul(2));
        let mut switching = ChaCha8Rng::seed_from_u64(seed);
        switching.set_stream(path_index.wrapping_mul(2).wrapping_add(1));
        PathStreams { noise, switching }
    }
}
