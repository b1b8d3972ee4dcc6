//! Seeded random streams.
//!
//! All randomness is drawn from ChaCha8 (`rand_chacha::ChaCha8Rng`), a
//! counter-based generator whose output is fixed across platforms. A single
//! top-level seed is split into purpose-specific sub-seeds with
//! [`derive_seed`] (SplitMix64 finalizer), and each sub-seed is further split
//! into independent streams by ChaCha's 64-bit stream id. OS entropy is never
//! consulted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Purpose labels fed to [`derive_seed`].
pub mod purpose {
    pub const DATA: u64 = 0x01;
    pub const INIT: u64 = 0x02;
    pub const CANDIDATES: u64 = 0x03;
    pub const NULLS: u64 = 0x04;
    pub const KMEANS: u64 = 0x05;
    pub const PCA_SAMPLE: u64 = 0x06;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive an independent sub-seed from `seed` for the given label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label))
}

/// Generator for `seed` positioned on stream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
