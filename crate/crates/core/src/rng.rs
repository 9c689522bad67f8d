//! Named random streams derived from one master seed.
//!
//! A stream seed is `splitmix64(master ^ fnv1a(name) ^ splitmix64(index))`,
//! so environment noise, exploration and replay sampling never share draws
//! and adding a consumer does not shift any other stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ENV_TRACE: &str = "env-trace";
pub const ENV_JITTER: &str = "env-jitter";
pub const EXPLORE: &str = "explore";
pub const REPLAY: &str = "replay";
pub const INIT: &str = "init";

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(master: u64, name: &str, index: u64) -> u64 {
    splitmix64(master ^ fnv1a(name) ^ splitmix64(index))
}

pub fn stream(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, name, index))
}
