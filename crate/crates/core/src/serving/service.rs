//! In-process halves of the deployment: the behavior-sequence encoder (BSE)
//! that owns user sequences and their cached bucket tables, and the scorer
//! (CTR side) that hashes candidates and gathers from a fetched table.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::Serialize;

use super::table::{encode_sequence, gather_codes, BucketTable, GatherResult};
use super::wire::{deserialize_bucket_table, serialize_bucket_table_with, Precision};
use crate::attention::BehaviorSequence;
use crate::error::{Error, Result};
use crate::simhash::HashFamily;

#[derive(Debug)]
struct UserEntry {
    version: u64,
    sequence: Arc<BehaviorSequence>,
}

#[derive(Debug)]
struct CachedTable {
    version: u64,
    bytes: Arc<Vec<u8>>,
}

#[derive(Debug, Default)]
struct BseCounters {
    encode_requests: AtomicU64,
    cache_hits: AtomicU64,
    cache_misses: AtomicU64,
    sequence_hash_passes: AtomicU64,
    updates: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct BseMetrics {
    pub encode_requests: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    /// Projection-kernel invocations over a behavior sequence.
    pub sequence_hash_passes: u64,
    pub updates: u64,
}

/// Owns user sequences and serves their serialized bucket tables, caching
/// each table until the user's sequence is replaced.
#[derive(Debug)]
pub struct BseService {
    family: HashFamily,
    precision: Precision,
    store: RwLock<HashMap<u64, Arc<UserEntry>>>,
    cache: RwLock<HashMap<u64, Arc<CachedTable>>>,
    counters: BseCounters,
}

impl BseService {
    pub fn new(family: HashFamily) -> Self {
        Self::with_precision(family, Precision::F32)
    }

    pub fn with_precision(family: HashFamily, precision: Precision) -> Self {
        Self {
            family,
            precision,
            store: RwLock::new(HashMap::new()),
            cache: RwLock::new(HashMap::new()),
            counters: BseCounters::default(),
        }
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    /// Replaces `user_id`'s sequence and returns its new version.
    pub fn replace_sequence(&self, user_id: u64, sequence: BehaviorSequence) -> Result<u64> {
        if sequence.dim() != self.family.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.family.dim(),
                found: sequence.dim(),
            });
        }
        let mut store = self.store.write();
        let version = store.get(&user_id).map_or(1, |e| e.version + 1);
        store.insert(
            user_id,
            Arc::new(UserEntry {
                version,
                sequence: Arc::new(sequence),
            }),
        );
        self.counters.updates.fetch_add(1, Ordering::Relaxed);
        Ok(version)
    }

    pub fn sequence(&self, user_id: u64) -> Result<(u64, Arc<BehaviorSequence>)> {
        let store = self.store.read();
        let entry = store.get(&user_id).ok_or(Error::UnknownUser(user_id))?;
        Ok((entry.version, Arc::clone(&entry.sequence)))
    }

    pub fn users(&self) -> usize {
        self.store.read().len()
    }

    /// Bucket table of `user_id` as wire bytes. The sequence is hashed only
    /// when no table for its current version is cached.
    pub fn encode(&self, user_id: u64) -> Result<Arc<Vec<u8>>> {
        self.counters.encode_requests.fetch_add(1, Ordering::Relaxed);
        let (version, sequence) = self.sequence(user_id)?;
        if let Some(hit) = self.cache.read().get(&user_id) {
            if hit.version == version {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(Arc::clone(&hit.bytes));
            }
        }
        self.counters.cache_misses.fetch_add(1, Ordering::Relaxed);
        self.counters.sequence_hash_passes.fetch_add(1, Ordering::Relaxed);
        let table = encode_sequence(&sequence, &self.family, user_id)?.with_version(version);
        let bytes = Arc::new(serialize_bucket_table_with(&table, self.precision)?);

        let mut cache = self.cache.write();
        let newer_cached = cache.get(&user_id).is_some_and(|c| c.version > version);
        if !newer_cached {
            cache.insert(
                user_id,
                Arc::new(CachedTable {
                    version,
                    bytes: Arc::clone(&bytes),
                }),
            );
        }
        Ok(bytes)
    }

    pub fn metrics(&self) -> BseMetrics {
        let c = &self.counters;
        BseMetrics {
            encode_requests: c.encode_requests.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            cache_misses: c.cache_misses.load(Ordering::Relaxed),
            sequence_hash_passes: c.sequence_hash_passes.load(Ordering::Relaxed),
            updates: c.updates.load(Ordering::Relaxed),
        }
    }
}

/// Where the scorer obtains serialized bucket tables from.
pub trait TableSource: Send + Sync {
    fn fetch_table(&self, user_id: u64) -> Result<Arc<Vec<u8>>>;
}

impl TableSource for BseService {
    fn fetch_table(&self, user_id: u64) -> Result<Arc<Vec<u8>>> {
        self.encode(user_id)
    }
}

impl<T: TableSource + ?Sized> TableSource for Arc<T> {
    fn fetch_table(&self, user_id: u64) -> Result<Arc<Vec<u8>>> {
        (**self).fetch_table(user_id)
    }
}

#[derive(Debug, Default)]
struct CtrCounters {
    requests: AtomicU64,
    candidates: AtomicU64,
    table_fetches: AtomicU64,
    table_bytes: AtomicU64,
    candidate_hash_passes: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct CtrMetrics {
    pub requests: u64,
    pub candidates: u64,
    pub table_fetches: u64,
    pub table_bytes: u64,
    pub candidate_hash_passes: u64,
}

/// Scores candidate batches against tables fetched from a [`TableSource`].
#[derive(Debug)]
pub struct CtrService<S> {
    family: HashFamily,
    source: S,
    counters: CtrCounters,
}

impl<S: TableSource> CtrService<S> {
    pub fn new(family: HashFamily, source: S) -> Self {
        Self {
            family,
            source,
            counters: CtrCounters::default(),
        }
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    /// Fetches the user's table once, hashes all candidates in one pass, and
    /// gathers each candidate's interest. `candidates` is row-major `B × d`.
    pub fn score(&self, user_id: u64, candidates: &[f64]) -> Result<Vec<GatherResult>> {
        let d = self.family.dim();
        if !candidates.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: candidates.len() % d,
            });
        }
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        self.counters
            .candidates
            .fetch_add((candidates.len() / d) as u64, Ordering::Relaxed);

        let bytes = self.source.fetch_table(user_id)?;
        self.counters.table_fetches.fetch_add(1, Ordering::Relaxed);
        self.counters.table_bytes.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        let table = deserialize_bucket_table(&bytes)?;
        table.check_family(&self.family)?;
        if table.user_id != user_id {
            return Err(Error::invalid(format!("table for user {} returned for {user_id}", table.user_id)));
        }
        Ok(self.gather_batch(&table, candidates))
    }

    pub fn gather_batch(&self, table: &BucketTable, candidates: &[f64]) -> Vec<GatherResult> {
        self.counters.candidate_hash_passes.fetch_add(1, Ordering::Relaxed);
        let signatures = self
            .family
            .signature_matrix(candidates)
            .expect("candidate dimension checked by caller");
        (0..signatures.len())
            .map(|i| gather_codes(signatures.row(i), table))
            .collect()
    }

    pub fn metrics(&self) -> CtrMetrics {
        let c = &self.counters;
        CtrMetrics {
            requests: c.requests.load(Ordering::Relaxed),
            candidates: c.candidates.load(Ordering::Relaxed),
            table_fetches: c.table_fetches.load(Ordering::Relaxed),
            table_bytes: c.table_bytes.load(Ordering::Relaxed),
            candidate_hash_passes: c.candidate_hash_passes.load(Ordering::Relaxed),
        }
    }
}
