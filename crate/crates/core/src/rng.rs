//! Counter-based deterministic random streams.
//!
//! Every stream is addressed by `(seed, domain, index)`, so any single
//! projection row, embedding or Monte-Carlo trial can be regenerated on its
//! own without replaying the streams before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never share a ChaCha key.
pub mod domain {
    pub const PROJECTION: u64 = 0x5052_4f4a;
    pub const CATEGORY: u64 = 0x4341_5447;
    pub const ITEM: u64 = 0x4954_454d;
    pub const INSTANCE: u64 = 0x494e_5354;
    pub const TRIAL: u64 = 0x5452_4941;
}

/// Returns the generator for stream `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(b"sdim-rng");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// SplitMix64 finalizer, used to derive child seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
