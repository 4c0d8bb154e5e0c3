#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sdim_core::{BehaviorSequence, ItemVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(r: &mut ChaCha8Rng, d: usize) -> ItemVector {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        if let Ok(u) = ItemVector::normalized(v) {
            return u;
        }
    }
}

pub fn random_sequence(r: &mut ChaCha8Rng, l: usize, d: usize, categories: u32) -> BehaviorSequence {
    let mut seq = BehaviorSequence::empty(d);
    for _ in 0..l {
        let v = random_unit(r, d);
        seq.push(&v, r.random_range(0..categories)).unwrap();
    }
    seq
}

/// Rounds a vector through f32, as it would arrive over the wire.
pub fn via_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x as f32)).collect()
}
