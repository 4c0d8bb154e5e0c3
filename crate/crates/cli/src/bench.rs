//! Per-method timing over an (L, B) grid, split into the sequence phase
//! (work done once per user) and the candidate phase (work per request).

use anyhow::Result;
use serde::Serialize;

use sdim_core::attention::{default_scale, EtaIndex};
use sdim_core::data::{generate_request, generate_user, InstanceConfig};
use sdim_core::perf::{samples, Stats};
use sdim_core::serving::{encode_sequence, gather_batch};
use sdim_core::{mean_pooling, sim_hard, target_attention, HashFamily, Weights};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub seq_lens: Vec<usize>,
    pub batches: Vec<usize>,
    pub d: usize,
    pub m: usize,
    pub tau: usize,
    pub k: usize,
    pub seed: u64,
    pub warmup: usize,
    pub iters: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub os: &'static str,
    pub arch: &'static str,
    pub logical_cpus: usize,
    pub debug_build: bool,
    pub version: &'static str,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            debug_build: cfg!(debug_assertions),
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodStats {
    pub method: &'static str,
    /// Once-per-user work; absent for methods that have none.
    pub sequence_phase: Option<Stats>,
    /// All `B` candidates of one request.
    pub candidate_phase: Stats,
    /// Candidate-phase samples divided by `B`.
    pub per_candidate: Stats,
    /// Sequence phase plus candidate phase, at p50.
    pub request_p50_ns: f64,
    /// Target-attention request time over this method's, sequence phase included.
    pub speedup_vs_ta: f64,
    /// The same ratio with the sequence phase amortized away.
    pub candidate_speedup_vs_ta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub seq_len: usize,
    pub candidates: usize,
    pub d: usize,
    pub m: usize,
    pub tau: usize,
    pub k: usize,
    pub methods: Vec<MethodStats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub environment: Environment,
    pub warmup: usize,
    pub iterations: usize,
    pub cells: Vec<GridCell>,
}

impl BenchReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "seq_len,candidates,d,m,tau,method,sequence_p50_ns,candidate_p50_ns,candidate_p95_ns,candidate_mean_ns,\
             per_candidate_p50_ns,request_p50_ns,speedup_vs_ta,candidate_speedup_vs_ta\n",
        );
        for c in &self.cells {
            for m in &c.methods {
                out += &format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{:.3},{:.3}\n",
                    c.seq_len,
                    c.candidates,
                    c.d,
                    c.m,
                    c.tau,
                    m.method,
                    m.sequence_phase.map_or(0.0, |s| s.p50_ns),
                    m.candidate_phase.p50_ns,
                    m.candidate_phase.p95_ns,
                    m.candidate_phase.mean_ns,
                    m.per_candidate.p50_ns,
                    m.request_p50_ns,
                    m.speedup_vs_ta,
                    m.candidate_speedup_vs_ta
                );
            }
        }
        out
    }
}

struct Timed {
    method: &'static str,
    sequence: Option<Vec<f64>>,
    candidates: Vec<f64>,
}

pub fn run(cfg: &BenchConfig) -> Result<BenchReport> {
    let family = HashFamily::sample(cfg.seed, cfg.m, cfg.tau, cfg.d)?;
    let scale = default_scale(cfg.d);
    let iters = cfg.iters.max(1);
    let mut cells = Vec::new();
    for &l in &cfg.seq_lens {
        for &b in &cfg.batches {
            let inst = InstanceConfig {
                seq_len: l,
                candidates: b,
                dim: cfg.d,
                users: 1,
                seed: cfg.seed,
                ..InstanceConfig::default()
            };
            let user = generate_user(&inst, 0)?;
            let seq = &user.sequence;
            let req = generate_request(&inst, &user, 0)?;
            let flat: Vec<f64> = req.items.iter().flat_map(|v| v.iter().copied()).collect();
            let mut timed = Vec::new();

            timed.push(Timed {
                method: "target-attention",
                sequence: None,
                candidates: samples(cfg.warmup, iters, || {
                    for q in &req.items {
                        let _ = target_attention(q, seq, scale, Weights::Skip);
                    }
                }),
            });

            let table = encode_sequence(seq, &family, user.user_id)?;
            timed.push(Timed {
                method: "sdim",
                sequence: Some(samples(cfg.warmup, iters, || encode_sequence(seq, &family, user.user_id))),
                candidates: samples(cfg.warmup, iters, || gather_batch(&flat, &table, &family)),
            });

            timed.push(Timed {
                method: "sim-hard",
                sequence: None,
                candidates: samples(cfg.warmup, iters, || {
                    for (q, &cat) in req.items.iter().zip(&req.categories) {
                        let _ = sim_hard(q, cat, seq, scale, Weights::Skip);
                    }
                }),
            });

            let index = EtaIndex::new(seq, &family)?;
            timed.push(Timed {
                method: "eta",
                sequence: Some(samples(cfg.warmup, iters, || EtaIndex::new(seq, &family))),
                candidates: samples(cfg.warmup, iters, || {
                    for q in &req.items {
                        let _ = index.attend(q, cfg.k, scale, Weights::Skip);
                    }
                }),
            });

            // the pooled vector does not depend on the candidate
            timed.push(Timed {
                method: "mean-pooling",
                sequence: Some(samples(cfg.warmup, iters, || mean_pooling(seq, Weights::Skip))),
                candidates: samples(cfg.warmup, iters, || ()),
            });

            cells.push(summarize(l, b, cfg, timed));
        }
    }
    Ok(BenchReport {
        environment: Environment::current(),
        warmup: cfg.warmup,
        iterations: iters,
        cells,
    })
}

fn summarize(l: usize, b: usize, cfg: &BenchConfig, timed: Vec<Timed>) -> GridCell {
    let partial: Vec<(&'static str, Option<Stats>, Stats, Stats)> = timed
        .into_iter()
        .map(|t| {
            let per: Vec<f64> = t.candidates.iter().map(|x| x / b as f64).collect();
            (
                t.method,
                t.sequence.as_deref().map(Stats::from_samples),
                Stats::from_samples(&t.candidates),
                Stats::from_samples(&per),
            )
        })
        .collect();
    let ta = partial[0].2.p50_ns;
    let methods = partial
        .into_iter()
        .map(|(method, sequence_phase, candidate_phase, per_candidate)| {
            let request = sequence_phase.map_or(0.0, |s| s.p50_ns) + candidate_phase.p50_ns;
            MethodStats {
                method,
                sequence_phase,
                candidate_phase,
                per_candidate,
                request_p50_ns: request,
                speedup_vs_ta: ta / request,
                candidate_speedup_vs_ta: ta / candidate_phase.p50_ns,
            }
        })
        .collect();
    GridCell {
        seq_len: l,
        candidates: b,
        d: cfg.d,
        m: cfg.m,
        tau: cfg.tau,
        k: cfg.k,
        methods,
    }
}
