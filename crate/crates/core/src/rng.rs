//! Seeded random streams.
//!
//! Every random decision is drawn from a stream identified by a 64-bit key.
//! Keys are derived by hashing, never by drawing from a shared generator, so
//! the value of a draw depends only on *which* object asks for it (replicate,
//! particle, segment, trap center) and not on evaluation order or on the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator behind every stream.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a parent key with a child word.
#[inline]
pub fn derive(key: u64, word: u64) -> u64 {
    mix64(key.wrapping_add(GOLDEN).wrapping_add(mix64(word ^ 0x6a09_e667_f3bc_c909)))
}

/// Named substream tags.
pub mod tag {
    pub const FIELD: u64 = 0x4649_454c_44;
    pub const TREE: u64 = 0x5452_4545;
    pub const GENEALOGY: u64 = 0x4745_4e45;
    pub const PATH: u64 = 0x5041_5448;
    pub const COLLISION: u64 = 0x434f_4c4c;
    pub const SELECT: u64 = 0x5345_4c45;
}

/// Stream for replicate `index` of an experiment seeded with `seed`, for the
/// named purpose `tag`.
pub fn replicate_key(seed: u64, index: u64, tag: u64) -> u64 {
    derive(derive(derive(seed, 0x5245_504c), index), tag)
}

pub fn stream(key: u64) -> StreamRng {
    StreamRng::seed_from_u64(key)
}

/// A uniform on [0, 1) that is a pure function of the four words.
#[inline]
pub fn hashed_uniform(key: u64, a: u64, b: u64, c: u64) -> f64 {
    let h = derive(derive(derive(key, a), b), c);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
