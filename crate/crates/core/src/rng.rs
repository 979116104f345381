//! Named random streams.
//!
//! Every consumer of randomness asks for a stream by `(master_seed, purpose,
//! shard)`. The master seed keys a ChaCha8 generator and the purpose/shard
//! pair selects its 64-bit stream (nonce), so streams are independent of one
//! another and of the order in which they are created. The stream id is
//! `splitmix64(fnv1a64(purpose) ^ splitmix64(shard))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn stream_id(purpose: &str, shard: u64) -> u64 {
    splitmix64(fnv1a64(purpose.as_bytes()) ^ splitmix64(shard))
}

/// Generator for `(master_seed, purpose, shard)`.
pub fn stream(master_seed: u64, purpose: &str, shard: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(purpose, shard));
    rng
}

pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` i.i.d. standard normal draws.
pub fn normals<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}
