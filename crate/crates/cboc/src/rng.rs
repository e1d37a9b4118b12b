//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! master seed plus a tag path (run, client, stage). Streams are independent
//! by construction, so results do not depend on scheduling or evaluation
//! order.

use rand::{Rng, RngExt};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// A seeded random stream. Concrete so that replays are stable across
/// platforms and releases.
pub type Stream = ChaCha12Rng;

/// Stage tags for stream derivation. Adding a stage never perturbs the
/// streams of existing stages.
pub mod stage {
    pub const RUN: u64 = 1;
    pub const HETERO: u64 = 2;
    pub const INIT_DESIGN: u64 = 3;
    pub const OBSERVE: u64 = 4;
    pub const ACQUISITION: u64 = 5;
    pub const FIT: u64 = 6;
}

/// SplitMix64 finalizer; good avalanche for seed mixing.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a tag path.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut h = mix(master ^ 0x6a09_e667_f3bc_c908);
    for &t in tags {
        h = mix(h ^ t.wrapping_mul(0x100_0000_01b3));
    }
    h
}

/// Creates a stream for the given tag path.
pub fn stream(master: u64, tags: &[u64]) -> Stream {
    ChaCha12Rng::seed_from_u64(derive_seed(master, tags))
}

/// Uniform point in an axis-aligned box.
pub fn uniform_point(rng: &mut impl Rng, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| rng.random_range(lo..=hi))
        .collect()
}

/// Standard normal draw via Box-Muller. Kept in-crate so the sampling
/// algorithm cannot drift underneath recorded experiments.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
