//! Seed derivation and random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator seeded with a
//! 64-bit seed and a stream id naming the purpose of the draws. A grid
//! experiment derives one seed per run from the base seed with [`derive`], so
//! results do not depend on the order in which runs are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids. Two draws with the same seed but different purposes are
/// independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Problem = 1,
    Sample = 2,
    Flip = 3,
    Init = 4,
    Shuffle = 5,
    Bernoulli = 6,
}

/// A generator for `seed` on the stream named by `purpose`.
pub fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of integer tags into a new seed.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}
