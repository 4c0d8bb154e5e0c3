//! Hash-sampling attention for long user-behavior sequences.
//!
//! The crate is organized bottom-up:
//!
//! - [`simhash`]: Gaussian random-projection hash families and τ-wide signatures.
//! - [`attention`]: the hash-sampling estimator, its closed-form expectation,
//!   exact target attention, and the SIM (hard), ETA and mean-pooling baselines.
//! - [`analysis`]: entropy, Monte-Carlo collision curves and weight-curve emission.
//! - [`serving`]: bucket tables, their wire format, and the sequence-encoder /
//!   scorer server pair.
//! - [`data`]: behavior-log loading and synthetic workloads.
//! - [`perf`] and [`verify`]: timing harness and the statistical check suites.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attention;
pub mod data;
pub mod error;
pub mod perf;
pub mod rng;
pub mod serving;
pub mod simhash;
pub mod vector;
pub mod verify;

pub use attention::{
    eta_topk, expected_attention, mean_pooling, sdim_attention, sdim_attention_tau0, sim_hard,
    target_attention, AttentionResult, BehaviorSequence, SdimConfig, Weights,
};
pub use error::{Error, Result};
pub use serving::{BucketTable, GatherResult};
pub use simhash::{sample_hash_family, HashFamily, SignBits, SignatureSet};
pub use vector::ItemVector;
