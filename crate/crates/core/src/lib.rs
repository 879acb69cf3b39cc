//! Morse-network offline reinforcement learning.
//!
//! A Morse neural network `M(s, a) = exp(-λ‖f(s, a) − t‖²)` is trained on an
//! offline dataset and then does three jobs: it acts as an implicit behavior
//! policy constraining the actor, it supplies an anti-exploration bonus
//! `log M ≤ 0` inside the critic's bootstrapped target, and it scores
//! synthetic model rollouts so they can be truncated once they drift off the
//! dataset's support.
//!
//! The crate is `no_std` (it needs `alloc`). All arithmetic is `f64` and all
//! transcendental functions go through `libm`, so results are bit-identical
//! between `std` and `no_std` builds. File formats and the command-line
//! driver live in the companion `momo` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod agent;
pub mod dynamics;
pub mod envtoy;
mod error;
pub mod morse;
pub mod nn;
pub mod rollout;

pub use error::{Error, Result};

/// Deterministic generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seeds a [`Rng`] from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Stream `stream` of the generator seeded with `seed`; distinct streams are
/// statistically independent, so each pipeline stage can own one.
pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = rng_from_seed(seed);
    rng.set_stream(stream);
    rng
}
