//! Deterministic random streams keyed by `(experiment id, seed, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

/// Seed for stream `(experiment, seed, index)`; distinct keys give
/// unrelated seeds.
pub fn stream_seed(experiment: &str, seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(fnv1a(experiment)) ^ seed) ^ index)
}

pub fn stream(experiment: &str, seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(experiment, seed, index))
}
