//! Seed derivation. Every stochastic consumer gets its own ChaCha stream
//! keyed by `(seed, tag, index)`, so results never depend on call order
//! across streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = splitmix64(seed);
    for b in tag.bytes() {
        h = splitmix64(h ^ b as u64);
    }
    splitmix64(h ^ index)
}

pub fn stream(seed: u64, tag: &str, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}
