//! Shared fixtures for the criterion benches.

use sdim_core::data::{generate_request, generate_user, InstanceConfig};
use sdim_core::serving::{encode_sequence, BucketTable};
use sdim_core::{BehaviorSequence, HashFamily, ItemVector};

pub struct Fixture {
    pub family: HashFamily,
    pub sequence: BehaviorSequence,
    pub categories: Vec<u32>,
    pub candidates: Vec<ItemVector>,
    /// `candidates` row-major, as the scoring server receives them.
    pub flat: Vec<f64>,
    pub table: BucketTable,
}

impl Fixture {
    pub fn new(seq_len: usize, batch: usize, d: usize, m: usize, tau: usize) -> Self {
        let inst = InstanceConfig {
            seq_len,
            candidates: batch,
            dim: d,
            users: 1,
            seed: 1,
            ..InstanceConfig::default()
        };
        let user = generate_user(&inst, 0).expect("valid instance");
        let request = generate_request(&inst, &user, 0).expect("valid instance");
        let family = HashFamily::sample(1, m, tau, d).expect("valid family");
        let table = encode_sequence(&user.sequence, &family, user.user_id).expect("matching dims");
        let flat = request.items.iter().flat_map(|v| v.iter().copied()).collect();
        Self {
            family,
            sequence: user.sequence,
            categories: request.categories,
            candidates: request.items,
            flat,
            table,
        }
    }

    /// The request shape used throughout: L = B = 1024, d = 128, m = 48, τ = 3.
    pub fn standard() -> Self {
        Self::new(1024, 1024, 128, 48, 3)
    }
}
