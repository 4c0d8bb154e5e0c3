//! Drives synthetic request streams through the BSE/CTR pair and reports
//! per-stage latency.

use std::net::TcpListener;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::net::{bse_serve, ctr_serve, Client, RemoteBse};
use super::service::{BseMetrics, BseService, CtrService};
use super::table::gather_codes;
use super::wire::{deserialize_bucket_table, Precision, ScoreRequest};
use crate::data::{generate_request, generate_user, InstanceConfig};
use crate::error::Result;
use crate::perf::Stats;
use crate::simhash::HashFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum Transport {
    /// Both services in this process; table bytes are passed by reference.
    #[default]
    InProcess,
    /// Both services behind loopback TCP servers.
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub instance: InstanceConfig,
    pub m: usize,
    pub tau: usize,
    pub requests: usize,
    /// Replace the requested user's sequence every this many requests (0 = never).
    pub update_every: usize,
    pub transport: Transport,
    pub precision: Precision,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            instance: InstanceConfig {
                seq_len: 1024,
                candidates: 1024,
                dim: 128,
                users: 100,
                ..InstanceConfig::default()
            },
            m: 48,
            tau: 3,
            requests: 1000,
            update_every: 0,
            transport: Transport::InProcess,
            precision: Precision::F32,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub transport: Transport,
    pub requests: usize,
    pub users: usize,
    pub seq_len: usize,
    pub candidates_per_request: usize,
    pub d: usize,
    pub m: usize,
    pub tau: usize,
    /// BSE-side sequence hashing and bucketing, measured on cache misses.
    pub sequence_hash: Stats,
    /// Obtaining the table bytes from the BSE, hits and misses alike.
    pub bse_fetch: Stats,
    pub table_bytes_mean: f64,
    pub table_bytes_max: usize,
    /// Decoding the transmitted table on the CTR side.
    pub table_decode: Stats,
    /// One batched hashing pass over the request's candidates.
    pub candidate_hash: Stats,
    /// Gather time divided by the number of candidates.
    pub gather_per_candidate: Stats,
    pub request_total: Stats,
    pub bse: BseMetrics,
}

fn ns_since(t: Instant) -> f64 {
    t.elapsed().as_nanos() as f64
}

pub fn simulate(cfg: &SimulationConfig) -> Result<LatencyReport> {
    let inst = &cfg.instance;
    inst.validate()?;
    let family = HashFamily::sample(inst.seed, cfg.m, cfg.tau, inst.dim)?;
    let bse = Arc::new(BseService::with_precision(family.clone(), cfg.precision));
    let users = (0..inst.users)
        .map(|u| generate_user(inst, u))
        .collect::<Result<Vec<_>>>()?;
    for u in &users {
        bse.replace_sequence(u.user_id, u.sequence.clone())?;
    }

    let mut sequence_hash = Vec::new();
    let mut bse_fetch = Vec::new();
    let mut table_decode = Vec::new();
    let mut candidate_hash = Vec::new();
    let mut gather = Vec::new();
    let mut total = Vec::new();
    let mut bytes_seen = Vec::new();

    let servers = match cfg.transport {
        Transport::InProcess => None,
        Transport::Tcp => {
            let bse_handle = bse_serve(TcpListener::bind("127.0.0.1:0")?, Arc::clone(&bse))?;
            let ctr = Arc::new(CtrService::new(family.clone(), RemoteBse::new(bse_handle.local_addr())));
            let ctr_handle = ctr_serve(TcpListener::bind("127.0.0.1:0")?, Arc::clone(&ctr))?;
            let client = Client::connect(ctr_handle.local_addr())?;
            Some((bse_handle, ctr, ctr_handle, client))
        }
    };
    let mut servers = servers;

    for r in 0..cfg.requests {
        let user = &users[r % users.len()];
        if cfg.update_every > 0 && r > 0 && r % cfg.update_every == 0 {
            let fresh = generate_user(
                &InstanceConfig {
                    seed: inst.seed.wrapping_add(r as u64),
                    ..*inst
                },
                (user.user_id - 1) as usize,
            )?;
            bse.replace_sequence(user.user_id, fresh.sequence)?;
        }
        let cands = generate_request(inst, user, (r / users.len()) as u64)?;

        match servers.as_mut() {
            None => {
                let flat: Vec<f64> = cands.items.iter().flat_map(|v| v.iter().copied()).collect();
                let start = Instant::now();
                let misses = bse.metrics().cache_misses;
                let t = Instant::now();
                let bytes = bse.encode(user.user_id)?;
                let fetch = ns_since(t);
                bse_fetch.push(fetch);
                if bse.metrics().cache_misses > misses {
                    sequence_hash.push(fetch);
                }
                bytes_seen.push(bytes.len());

                let t = Instant::now();
                let table = deserialize_bucket_table(&bytes)?;
                table.check_family(&family)?;
                table_decode.push(ns_since(t));

                let t = Instant::now();
                let sigs = family.signature_matrix(&flat)?;
                candidate_hash.push(ns_since(t));

                let t = Instant::now();
                let mut hits = 0usize;
                for i in 0..sigs.len() {
                    hits += gather_codes(sigs.row(i), &table).hit_rounds;
                }
                std::hint::black_box(hits);
                gather.push(ns_since(t) / sigs.len().max(1) as f64);
                total.push(ns_since(start));
            }
            Some((_, _, _, client)) => {
                let request = ScoreRequest {
                    user_id: user.user_id,
                    candidates: cands
                        .items
                        .iter()
                        .map(|v| v.iter().map(|&x| x as f32).collect())
                        .collect(),
                };
                let t = Instant::now();
                client.score(request)?;
                total.push(ns_since(t));
            }
        }
    }

    if let Some((bse_handle, ctr, ctr_handle, client)) = servers.take() {
        let m = ctr.metrics();
        if let Some(mean) = m.table_bytes.checked_div(m.table_fetches) {
            bytes_seen.push(mean as usize);
        }
        drop(client);
        ctr_handle.shutdown();
        bse_handle.shutdown();
    }

    Ok(LatencyReport {
        transport: cfg.transport,
        requests: cfg.requests,
        users: inst.users,
        seq_len: inst.seq_len,
        candidates_per_request: inst.candidates,
        d: inst.dim,
        m: cfg.m,
        tau: cfg.tau,
        sequence_hash: Stats::from_samples(&sequence_hash),
        bse_fetch: Stats::from_samples(&bse_fetch),
        table_bytes_mean: if bytes_seen.is_empty() {
            0.0
        } else {
            bytes_seen.iter().sum::<usize>() as f64 / bytes_seen.len() as f64
        },
        table_bytes_max: bytes_seen.iter().copied().max().unwrap_or(0),
        table_decode: Stats::from_samples(&table_decode),
        candidate_hash: Stats::from_samples(&candidate_hash),
        gather_per_candidate: Stats::from_samples(&gather),
        request_total: Stats::from_samples(&total),
        bse: bse.metrics(),
    })
}
