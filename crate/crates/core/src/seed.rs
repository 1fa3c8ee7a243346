//! Sub-seed derivation.
//!
//! Every random stream in a run is keyed by `(master_seed, purpose_tag)` so
//! that adding a consumer (a probe, a new diagnostic) never shifts the draws
//! of another. Tags are hashed with 64-bit FNV-1a and mixed with the master
//! seed through two rounds of SplitMix64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Sub-seed for `tag` under `master`.
pub fn derive(master: u64, tag: &str) -> u64 {
    splitmix64(splitmix64(master) ^ fnv1a(tag))
}

/// Sub-seed for the `index`-th member of a tagged family (e.g. per task).
pub fn derive_indexed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive(master, tag) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
