//! Seeded random streams.
//!
//! Every stochastic component receives its own stream derived from a base seed
//! and a list of integer tags, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with tags into a single 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

/// A stream for `(base, tags...)`.
pub fn stream(base: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stable numeric tag for a string label.
pub fn tag(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}
