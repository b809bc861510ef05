//! Seed handling.
//!
//! Every random stream in the toolkit is a `ChaCha8Rng` seeded with a
//! sub-seed derived from one user seed:
//!
//! ```text
//! sub_seed(seed, tag, index) = splitmix64(splitmix64(seed ^ fnv1a64(tag)) ^ index)
//! ```
//!
//! where `tag` names the stream (`"factors"`, `"noise"`, `"mask"`, `"init"`,
//! `"wafer"`, `"cv"`, ...) and `index` distinguishes repetitions of the same
//! stream, e.g. the mask drawn for the third sampling ratio. Distinct tags
//! give independent, individually reproducible streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod stream {
    pub const FACTORS: &str = "factors";
    pub const NOISE: &str = "noise";
    pub const MASK: &str = "mask";
    pub const INIT: &str = "init";
    pub const WAFER: &str = "wafer";
    pub const CV: &str = "cv";
    pub const PROBE: &str = "probe";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn sub_seed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a64(tag)) ^ index)
}

pub fn stream_rng(seed: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(sub_seed(seed, tag, index))
}
