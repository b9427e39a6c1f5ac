//! Counter-based seeding.
//!
//! Every random draw in the toolkit comes from a generator keyed on
//! `(master seed, stream, index)`, so results do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a stream tag and a counter into a new 64-bit seed.
pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

/// FNV-1a, used to turn string keys (image ids, subject ids) into counters.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn rng(seed: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive(seed, stream, index))
}

/// Stream tags, one per consumer, so that draws never alias across modules.
pub mod stream {
    pub const ACE: u64 = 1;
    pub const EYE_NOISE: u64 = 2;
    pub const BRIGHTNESS: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const IMPOSTOR: u64 = 5;
    pub const SVM_ORDER: u64 = 6;
    pub const TREE: u64 = 7;
    pub const SYNTH_IMAGE: u64 = 8;
    pub const SYNTH_LATENT: u64 = 9;
    pub const SYNTH_NOISE: u64 = 10;
    pub const SYNTH_SHIFT: u64 = 11;
    pub const AUGMENT_NOISE: u64 = 12;
    pub const VOTING: u64 = 13;
}
