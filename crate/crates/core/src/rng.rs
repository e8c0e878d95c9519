//! Deterministic randomness.
//!
//! Every stochastic step draws from ChaCha8, a counter-based generator whose
//! output is fixed by the seed on every platform. Independent work items get
//! their own stream (`set_stream`) rather than sharing a generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `stream` of the generator keyed by `seed`. Streams of one seed do
/// not overlap.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `keys` into `seed`; used for noise that must be a pure function of ids.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn keyed_rng(seed: u64, keys: &[u64]) -> SimRng {
    seeded_rng(derive_seed(seed, keys))
}
