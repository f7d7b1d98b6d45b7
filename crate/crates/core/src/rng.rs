//! Seeded random streams. Every consumer (environment resets, exploration,
//! replay sampling, estimation rollouts, evaluation) draws from its own
//! ChaCha stream so that disabling one consumer never shifts another.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Stream identifiers used by the training harness.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const ENV: u64 = 2;
    pub const EXPLORE: u64 = 3;
    pub const REPLAY: u64 = 4;
    pub const ESTIMATE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const DYNAMICS: u64 = 7;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
