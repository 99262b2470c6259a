//! Deterministic random streams for replica-parallel experiments.
//!
//! Every replica owns a `ChaCha8Rng` keyed by the run's (derived) seed and
//! positioned on its own stream, so no replica's draws depend on another's.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ReplicaRng = ChaCha8Rng;

/// Stream `replica` of the generator keyed by `seed`.
pub fn rng_stream(seed: u64, replica: u64) -> ReplicaRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Sub-seed for one cell of an experiment (e.g. one `(rho, n)` pair), so
/// cells can be added or reordered without perturbing the others.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Tag for a real-valued parameter, exact on its bit pattern.
pub fn tag_f64(x: f64) -> u64 {
    x.to_bits()
}

/// Seed 0 means "draw one from the OS"; anything else is used verbatim.
pub fn resolve_seed(seed: u64) -> u64 {
    if seed != 0 {
        return seed;
    }
    loop {
        let s: u64 = rand::random();
        if s != 0 {
            return s;
        }
    }
}
