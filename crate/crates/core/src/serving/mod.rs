//! The two-server deployment miniature.
//!
//! The BSE (behavior sequence encoding) side hashes a user's sequence once,
//! buckets the items per round, and ships the bucket table. The CTR side
//! hashes only the candidates and gathers from the table, so its per-candidate
//! work is independent of the sequence length.

mod net;
mod service;
mod simulate;
mod table;
pub mod wire;

pub use net::{bse_serve, ctr_serve, Client, RemoteBse, ServerHandle};
pub use service::{BseMetrics, BseService, CtrMetrics, CtrService, TableSource};
pub use simulate::{simulate, LatencyReport, SimulationConfig, Transport};
pub use table::{
    encode_sequence, gather_batch, gather_interest, gather_signed, Bucket, BucketTable, GatherResult, BUCKET_NORM_TOLERANCE,
};
pub use wire::{
    deserialize_bucket_table, encoded_len, serialize_bucket_table, serialize_bucket_table_with, Message, Precision,
    ScoreRequest, ScoreResponse, ScoredCandidate,
};
