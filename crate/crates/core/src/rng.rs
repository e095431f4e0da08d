//! Named, seed-derived random streams.
//!
//! Every consumer (init, shuffle, augment, dropout) draws from its own
//! ChaCha8 stream derived from the run seed, a stream name and an index, so
//! enabling one consumer never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th instance of stream `name` under `seed`.
pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(name.as_bytes())) ^ splitmix64(index.wrapping_add(0x5851_f42d)))
}

pub fn substream(seed: u64, name: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name, index))
}
