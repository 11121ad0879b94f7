//! Seeded randomness.
//!
//! Every stochastic component draws from its own ChaCha8 stream. Component
//! seeds are derived from one global seed with [`derive_seed`], so a partial
//! rerun of a single stage sees the same stream as the full pipeline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed streams used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Gan = 1,
    Sampler = 2,
    Undersample = 3,
    Mlp = 4,
    Fixture = 5,
}

/// `splitmix64(global + 0x9E37_79B9_7F4A_7C15 * stream)`.
pub fn derive_seed(global: u64, stream: Stream) -> u64 {
    splitmix64(global.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream as u64)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
