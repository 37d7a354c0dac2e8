//! Seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha8 stream keyed by
//! `(master seed, purpose)` and positioned on a per-entity stream id (usually
//! a user id). Results therefore never depend on iteration order or on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags, mixed into the key so different stages never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Fraction = 1,
    Augment = 2,
    Embedding = 3,
    Scorer = 4,
    EvalNegatives = 5,
    Synthetic = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, purpose: Purpose) -> u64 {
    splitmix64(splitmix64(seed) ^ (purpose as u64).wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Generator for `(seed, purpose)` positioned on stream `stream`.
pub fn substream(seed: u64, purpose: Purpose, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose));
    rng.set_stream(stream);
    rng
}
