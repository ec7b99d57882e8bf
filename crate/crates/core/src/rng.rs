//! Named, seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the run seed, so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Buffer = 2,
    Crop = 3,
    Ema = 4,
    Init = 5,
    Scene = 6,
    Sample = 7,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Stream for an indexed sub-item (e.g. one synthetic sample), independent of
/// iteration order.
pub fn indexed(seed: u64, which: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(((which as u64) << 32) | (index & 0xFFFF_FFFF));
    rng
}
