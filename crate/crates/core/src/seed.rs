//! Key-splitting of the master seed into independent, reproducible streams.
//!
//! A derived seed is `splitmix64(master ^ fnv1a64(key))`; each subsystem
//! (phantoms, split, init, training) uses its own key so that changing one
//! stage never perturbs another stage's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream named `key` under `master`.
pub fn derive(master: u64, key: &str) -> u64 {
    splitmix64(master ^ fnv1a64(key.as_bytes()))
}

pub fn rng(master: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, key))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn keys_are_independent() {
        assert_ne!(derive(7, "phantom"), derive(7, "train"));
        assert_ne!(derive(7, "phantom"), derive(8, "phantom"));
        assert_eq!(derive(7, "phantom"), derive(7, "phantom"));
    }
}
