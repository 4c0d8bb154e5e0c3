//! Statistical and structural check suites. Each suite appends named checks
//! and measurement rows to a [`VerifyReport`]; the report passes when every
//! gating check does.

use std::io::Write;
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::analysis::{emit_attention_curves, empirical_collision_curve, entropy_vs_tau, pearson};
use crate::attention::{
    default_scale, eta_topk, expected_attention, mean_pooling, sdim_attention, sdim_attention_tau0, sim_hard,
    target_attention, BehaviorSequence, EmptyRounds, HashedSequence, SdimConfig, Weights,
};
use crate::data::{generate_request, generate_user, CandidateSet, InstanceConfig, SyntheticUser};
use crate::error::Result;
use crate::perf::Stats;
use crate::rng;
use crate::serving::{
    bse_serve, ctr_serve, deserialize_bucket_table, encode_sequence, gather_batch, serialize_bucket_table, Bucket,
    BseService, BucketTable, Client, CtrService, RemoteBse, ScoreRequest,
};
use crate::simhash::HashFamily;
use crate::vector::{cosine, dot, linf, ItemVector};

const VERIFY_DOMAIN: u64 = 0x7665_7269;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// Failing it fails the run.
    Gate,
    /// Informational; never fails the run.
    Report,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub suite: &'static str,
    pub name: String,
    pub kind: CheckKind,
    pub passed: bool,
    pub detail: String,
}

/// One measured quantity, e.g. the mean cosine at `rounds=16`.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub suite: &'static str,
    pub parameter: String,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerfCell {
    pub seq_len: usize,
    pub candidates: usize,
    pub d: usize,
    pub m: usize,
    pub tau: usize,
    /// Hashing and bucketing the sequence once.
    pub sequence_phase: Stats,
    /// Candidate hashing plus gather for the whole batch.
    pub sdim_request: Stats,
    /// Exact target attention over the whole batch.
    pub ta_request: Stats,
    pub speedup_p50: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
    pub rows: Vec<ReportRow>,
    pub perf: Vec<PerfCell>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.kind == CheckKind::Report || c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| c.kind == CheckKind::Gate && !c.passed)
    }

    pub fn check(&self, suite: &str, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.suite == suite && c.name == name)
    }

    pub fn suite_passed(&self, suite: &str) -> bool {
        let mut any = false;
        for c in self.checks.iter().filter(|c| c.suite == suite && c.kind == CheckKind::Gate) {
            any = true;
            if !c.passed {
                return false;
            }
        }
        any
    }

    pub fn rows_for<'a>(&'a self, suite: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.suite == suite)
    }

    /// Rows first, then checks, in one `record,suite,name,metric,value,passed,detail` table.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["record", "suite", "name", "metric", "value", "passed", "detail"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(["row", r.suite, &r.parameter, r.metric, &r.value.to_string(), "", ""])
                .map_err(csv_err)?;
        }
        for c in &self.checks {
            let kind = match c.kind {
                CheckKind::Gate => "gate",
                CheckKind::Report => "report",
            };
            w.write_record(["check", c.suite, &c.name, kind, "", &c.passed.to_string(), &c.detail])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    fn gate(&mut self, suite: &'static str, name: impl Into<String>, passed: bool, detail: String) {
        self.push(suite, name, CheckKind::Gate, passed, detail);
    }

    fn note(&mut self, suite: &'static str, name: impl Into<String>, passed: bool, detail: String) {
        self.push(suite, name, CheckKind::Report, passed, detail);
    }

    fn push(&mut self, suite: &'static str, name: impl Into<String>, kind: CheckKind, passed: bool, detail: String) {
        self.checks.push(CheckOutcome {
            suite,
            name: name.into(),
            kind,
            passed,
            detail,
        });
    }

    fn row(&mut self, suite: &'static str, parameter: String, metric: &'static str, value: f64) {
        self.rows.push(ReportRow {
            suite,
            parameter,
            metric,
            value,
        });
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

pub mod suite {
    pub const COLLISION: &str = "collision-law";
    pub const CONVERGENCE: &str = "convergence";
    pub const M_SWEEP: &str = "m-sweep";
    pub const TAU_SWEEP: &str = "tau-sweep";
    pub const ALIGNMENT: &str = "attention-alignment";
    pub const ENTROPY: &str = "entropy-monotonicity";
    pub const LIMITS: &str = "limit-behaviors";
    pub const ORACLES: &str = "oracle-equivalence";
    pub const SERVING: &str = "serving-equivalence";
    pub const EMPTY_ROUNDS: &str = "empty-round-sensitivity";
    pub const PERF: &str = "performance";
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    pub collision_trials: usize,
    pub collision_cosines: Vec<f64>,
    pub collision_taus: Vec<usize>,
    /// Convergence instances: sequence length and dimension.
    pub seq_len: usize,
    pub dim: usize,
    pub candidates_per_seed: usize,
    pub convergence_seeds: usize,
    pub convergence_tau: usize,
    pub rounds_sweep: Vec<usize>,
    pub m_sweep: Vec<usize>,
    pub tau_sweep: Vec<usize>,
    /// Rounds held fixed while τ varies.
    pub tau_sweep_rounds: usize,
    pub entropy_instances: usize,
    pub entropy_taus: Vec<f64>,
    pub limit_seeds: usize,
    pub oracle_instances: usize,
    pub serving_cases: usize,
    pub fuzz_tables: usize,
    pub perf: bool,
    pub perf_seq_len: usize,
    pub perf_dim: usize,
    pub perf_m: usize,
    pub perf_tau: usize,
    pub perf_batches: Vec<usize>,
    pub perf_iters: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            collision_trials: 100_000,
            collision_cosines: vec![-0.9, -0.5, 0.0, 0.5, 0.9, 1.0],
            collision_taus: vec![1, 2, 3],
            seq_len: 256,
            dim: 64,
            candidates_per_seed: 16,
            convergence_seeds: 20,
            convergence_tau: 3,
            rounds_sweep: vec![4, 8, 16, 32, 64],
            m_sweep: vec![24, 36, 48, 60, 72, 90, 120],
            tau_sweep: vec![1, 2, 3, 5, 10],
            tau_sweep_rounds: 16,
            entropy_instances: 100,
            entropy_taus: vec![0.5, 1.0, 2.0, 3.0, 5.0, 10.0],
            limit_seeds: 100,
            oracle_instances: 100,
            serving_cases: 100,
            fuzz_tables: 1000,
            perf: false,
            perf_seq_len: 1024,
            perf_dim: 128,
            perf_m: 48,
            perf_tau: 3,
            perf_batches: vec![64, 256, 1024],
            perf_iters: 15,
        }
    }
}

/// Runs every suite (the performance suite only when `cfg.perf`).
pub fn run(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    collision_law(cfg, &mut report)?;
    convergence(cfg, &mut report)?;
    m_sweep(cfg, &mut report)?;
    tau_sweep(cfg, &mut report)?;
    attention_alignment(&mut report)?;
    entropy_monotonicity(cfg, &mut report)?;
    limit_behaviors(cfg, &mut report)?;
    oracle_equivalence(cfg, &mut report)?;
    serving_equivalence(cfg, &mut report)?;
    empty_round_sensitivity(cfg, &mut report)?;
    if cfg.perf {
        performance(cfg, &mut report)?;
    }
    Ok(report)
}

fn stream(cfg: &VerifyConfig, purpose: u64, index: u64) -> ChaCha8Rng {
    rng::stream(cfg.seed ^ rng::mix(purpose), VERIFY_DOMAIN, index)
}

fn random_unit(r: &mut impl Rng, d: usize) -> ItemVector {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        if let Ok(u) = ItemVector::normalized(v) {
            return u;
        }
    }
}

fn random_sequence(r: &mut impl Rng, l: usize, d: usize, categories: u32) -> BehaviorSequence {
    let mut seq = BehaviorSequence::empty(d);
    for _ in 0..l {
        let v = random_unit(r, d);
        seq.push(&v, r.random_range(0..categories)).expect("dimension matches");
    }
    seq
}

pub fn collision_law(cfg: &VerifyConfig, report: &mut VerifyReport) -> Result<()> {
    let s = suite::COLLISION;
    for &tau in &cfg.collision_taus {
        let curve = empirical_collision_curve(&cfg.collision_cosines, tau, cfg.collision_trials, cfg.seed ^ tau as u64)?;
        for p in curve {
            let bound = p.four_sigma(cfg.collision_trials);
            let err = (p.empirical - p.expected).abs();
            let param = format!("cos={},tau={tau}", p.cos);
            report.row(s, param.clone(), "empirical", p.empirical);
            report.row(s, param.clone(), "expected", p.expected);
            report.gate(
                s,
                format!("4-sigma {param}"),
                err <= bound,
                format!("empirical {:.5} expected {:.5} |diff| {err:.2e} bound {bound:.2e}", p.empirical, p.expected),
            );
            if p.cos == 0.0 && tau == 3 {
                report.gate(
                    s,
                    "cos=0 tau=3 within 0.01 of 0.125",
                    (p.empirical - 0.125).abs() <= 0.01,
                    format!("empirical {:.5}", p.empirical),
                );
            }
        }
    }
    Ok(())
}

/// Clustered instances used by the convergence, sweep and sensitivity suites.
struct ConvergenceSet {
    cases: Vec<(SyntheticUser, CandidateSet)>,
    family_seeds: Vec<u64>,
}

impl ConvergenceSet {
    fn new(cfg: &VerifyConfig) -> Result<Self> {
        let mut cases = Vec::new();
        let mut family_seeds = Vec::new();
        for s in 0..cfg.convergence_seeds as u64 {
            let inst = InstanceConfig {
                seq_len: cfg.seq_len,
                candidates: cfg.candidates_per_seed,
                dim: cfg.dim,
                users: 1,
                seed: rng::mix(cfg.seed.wrapping_add(s)),
                ..InstanceConfig::default()
            };
            let user = generate_user(&inst, 0)?;
            let request = generate_request(&inst, &user, 0)?;
            cases.push((user, request));
            family_seeds.push(rng::mix(cfg.seed ^ 0x5eed_0000 ^ s));
        }
        Ok(Self { cases, family_seeds })
    }

    /// Per-seed mean over candidates of cosine(sdim, expected), plus the
    /// mean hit-round fraction. Families for one seed share their seed, so
    /// families with more rounds extend those with fewer.
    fn measure(&self, rounds: usize, tau: usize, empty: EmptyRounds) -> Result<Measured> {
        let mut per_seed = Vec::with_capacity(self.cases.len());
        let mut hit_fraction = 0.0;
        let mut norm_sum = 0.0;
        let mut n = 0usize;
        let config = SdimConfig {
            empty_rounds: empty,
            ..SdimConfig::default()
        };
        for ((user, request), &fseed) in self.cases.iter().zip(&self.family_seeds) {
            let family = HashFamily::sample(fseed, rounds * tau, tau, user.sequence.dim())?;
            let hashed = HashedSequence::new(&user.sequence, &family)?;
            let mut acc = 0.0;
            for q in &request.items {
                let got = hashed.attend(q, &config)?;
                let want = expected_attention(q, &user.sequence, tau as u32, Weights::Skip)?;
                acc += cosine(&got.interest, &want.interest);
                let q_sig = family.signatures(q)?;
                let hits = (0..rounds)
                    .filter(|&r| (0..user.sequence.len()).any(|j| hashed.signatures().code(j, r) == q_sig.codes[r]))
                    .count();
                hit_fraction += hits as f64 / rounds as f64;
                norm_sum += crate::vector::norm(&got.interest);
                n += 1;
            }
            per_seed.push(acc / request.items.len() as f64);
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let min = per_seed.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Measured {
            mean,
            min,
            hit_fraction: hit_fraction / n as f64,
            mean_norm: norm_sum / n as f64,
        })
    }
}

struct Measured {
    mean: f64,
    min: f64,
    hit_fraction: f64,
    mean_norm: f64,
}

pub fn convergence(cfg: &VerifyConfig, report: &mut VerifyReport) -> Result<()> {
    let s = suite::CONVERGENCE;
    let set = ConvergenceSet::new(cfg)?;
    let tau = cfg.convergence_tau;
    let mut means = Vec::new();
    for &rounds in &cfg.rounds_sweep {
        let m = set.measure(rounds, tau, EmptyRounds::Exclude)?;
        report.row(s, format!("rounds={rounds}"), "mean_cosine", m.mean);
        report.row(s, format!("rounds={rounds}"), "min_seed_cosine", m.min);
        means.push((rounds, m.mean));
    }
    let listing = means
        .iter()
        .map(|(r, c)| format!("{r}:{c:.4}"))
        .collect::<Vec<_>>()
        .join(" ");
    let monotone = means.windows(2).all(|w| w[1].1 >= w[0].1);
    report.gate(s, "non-decreasing in rounds", monotone, listing.clone());
    if let Some(&(_, c)) = means.iter().find(|(r, _)| *r == 16) {
        report.gate(s, "mean cosine >= 0.95 at 16 rounds", c >= 0.95, format!("{c:.4}"));
    }
    Ok(())
}

pub fn m_sweep(cfg: &VerifyConfig, report: &mut VerifyReport) -> Result<()> {
    let s = suite::M_SWEEP;
    let set = ConvergenceSet::new(cfg)?;
    let tau = cfg.convergence_tau;
    for &m in &cfg.m_sweep {
        if m % tau != 0 {
            report.note(s, format!("m={m}"), false, format!("skipped: not a multiple of tau={tau}"));
            continue;
        }
        let r = set.measure(m / tau, tau, EmptyRounds::Exclude)?;
        report.row(s, format!("m={m},tau={tau}"), "mean_cosine", r.mean);
        if m == 48 && tau == 3 {
            report.gate(s, "m=48 tau=3 mean cosine >= 0.95", r.mean >= 0.95, format!("{:.4}", r.mean));
        }
    }
    Ok(())
}

pub fn tau_sweep(cfg: &VerifyConfig, report: &mut VerifyReport) -> Result<()> {
    let s = suite::TAU_SWEEP;
    let set = ConvergenceSet::new(cfg)?;
    let rounds = cfg.tau_sweep_rounds;
    let mut listing = Vec::new();
    for &tau in &cfg.tau_sweep {
        let r = set.measure(rounds, tau, EmptyRounds::Exclude)?;
        let param = format!("tau={tau},m={}", rounds * tau);
        report.row(s, param.clone(), "mean_cosine", r.mean);
        report.row(s, param, "hit_fraction", r.hit_fraction);
        listing.push(format!("{tau}:{:.4}/{:.2}", r.mean, r.hit_fraction));
    }
    report.note(s, format!("cosine/hit-fraction at {rounds} rounds"), true, listing.join(" "));
    Ok(())
}

pub fn attention_alignment(report: &mut VerifyReport) -> Result<()> {
    let s = suite::ALIGNMENT;
    let curves = emit_attention_curves(3, 0.5, 201)?;
    let r = pearson(&curves.sdim_column(), &curves.ta_column());
    report.row(s, "tau=3,scale=0.5,points=201".into(), "pearson", r);
    report.gate(s, "pearson >= 0.99", r >= 0.99, format!("{r:.5}"));
    Ok(())
}

pub fn entropy_monotonicity(cfg: &VerifyConfig, report: &mut VerifyReport) -> Result<()> {
    let s = suite::ENTROPY;
    let taus = &cfg.entropy_taus;
    let mut worst_slope = f64::NEG_INFINITY;
    let mut non_strict = 0usize;
    for i in 0..cfg.entropy_instances as u64 {
        let mut r = stream(cfg, 0xe7, i);
        let l = r.random_range(2..=64);
        let d = r.random_range(2..=16);
        let seq = random_sequence(&mut r, l, d, 1);
        let q = random_unit(&mut r, d);
        let curve = entropy_vs_tau(&q, &seq, taus)?;
        for w in curve.windows(2) {
            let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            worst_slope = worst_slope.max(slope);
        }
        let dots: Vec<f64> = seq.items().map(|x| dot(&q, x)).collect();
        let spread = dots.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - dots.iter().copied().fold(f64::INFINITY, f64::min);
        if spread > 0.0 && !curve.windows(2).all(|w| w[1].1 < w[0].1) {
            non_strict += 1;
        }
    }
    report.row(s, format!("instances={}", cfg.entropy_instances), "max_slope", worst_slope);
    report.gate(
        s,
        "dH/dtau <= 1e-9",
        worst_slope <= 1e-9,
        format!("largest finite-difference slope {worst_slope:.3e}"),
    );
    report.gate(
        s,
        "strict decrease when dot products differ",
        non_strict == 0,
        format!("{non_strict} instances not strictly decreasing"),
    );

    // every item identical: the weights stay uniform at any width
    let mut r = stream(cfg, 0xe7, u64::MAX);
    let x = random_unit(&mut r, 8);
    let seq = BehaviorSequence::from_items(vec![x; 10])?;
    let q = random_unit(&mut r, 8);
    let curve = entropy_vs_tau(&q, &seq, taus)?;
    let ln_l = (10f64).ln();
    let dev = curve.iter().map(|(_, h)| (h - ln_l).abs()).fold(0.0, f64::max);
    report.gate(
        s,
        "constant entropy on degenerate instance",
        dev <= 1e-9,
        format!("max |H - ln L| = {dev:.3e}"),
    );
    Ok(())
}

pub fn limit_behaviors(cfg: &VerifyConfig, report: &mut VerifyReport) -> Result<()> {
    let s = suite::LIMITS;

    let mut worst_colinear = 0.0f64;
    let mut worst_eta = 0.0f64;
    for i in 0..cfg.limit_seeds as u64 {
        let mut r = stream(cfg, 0x11, i);
        let l = r.random_range(1..=64);
        let d = r.random_range(2..=16);
        let seq = random_sequence(&mut r, l, d, 4);
        let tau0 = sdim_attention_tau0(&seq, Weights::Skip)?;
        let mean = mean_pooling(&seq, Weights::Skip)?;
        if !tau0.is_zero() {
            worst_colinear = worst_colinear.max((cosine(&tau0.interest, &mean.interest) - 1.0).abs());
        }
        let q = random_unit(&mut r, d);
        let family = HashFamily::sample(r.next_u64(), 24, 3, d)?;
        let scale = default_scale(d);
        let eta = eta_topk(&q, &seq, &family, l, scale, Weights::Keep)?;
        let ta = target_attention(&q, &seq, scale, Weights::Keep)?;
        worst_eta = worst_eta
            .max(linf(&eta.interest, &ta.interest))
            .max(linf(eta.weights.as_deref().unwrap_or(&[]), ta.weights.as_deref().unwrap_or(&[])));
    }
    report.gate(
        s,
        "tau0 colinear with mean pooling",
        worst_colinear <= 1e-6,
        format!("max |cos - 1| = {worst_colinear:.3e}"),
    );
    report.gate(s, "eta with k=L equals target attention", worst_eta <= 1e-6, format!("max diff {worst_eta:.3e}"));

    let mut exact = 0usize;
    for i in 0..cfg.limit_seeds as u64 {
        let mut r = stream(cfg, 0x12, i);
        let d = 64;
        let q = random_unit(&mut r, d);
        let at = r.random_range(0..256);
        let mut items = Vec::with_capacity(256);
        for j in 0..256 {
            if j == at {
                items.push(q.clone());
            } else {
                let v: Vec<f64> = q
                    .iter()
                    .map(|&x| -x + 0.33 / (d as f64).sqrt() * r.sample::<f64, _>(StandardNormal))
                    .collect();
                items.push(ItemVector::normalized(v)?);
            }
        }
        let seq = BehaviorSequence::from_items(items)?;
        let family = HashFamily::sample(r.next_u64(), 64, 16, d)?;
        let out = sdim_attention(&q, &seq, &family, Weights::Skip)?;
        if cosine(&out.interest, &q) >= 1.0 - 1e-6 {
            exact += 1;
        }
    }
    report.row(s, "m=64,tau=16".into(), "exact_recoveries", exact as f64);
    let needed = (cfg.limit_seeds * 99).div_ceil(100);
    report.gate(
        s,
        "adversarial instance recovers q",
        exact >= needed,
        format!("{exact}/{} seeds", cfg.limit_seeds),
    );
    Ok(())
}

/// `‖a − b‖∞ / ‖b‖∞`; zero when both vanish.
fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = linf(a, b);
    if scale == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / scale
    }
}

/// Softmax-weighted sum over `subset`, written as plain loops.
#[allow(clippy::needless_range_loop)]
fn naive_softmax(q: &[f64], seq: &BehaviorSequence, subset: &[usize], scale: f64) -> (Vec<f64>, Vec<f64>) {
    let d = seq.dim();
    let mut weights = vec![0.0; seq.len()];
    let mut interest = vec![0.0; d];
    if subset.is_empty() {
        return (interest, weights);
    }
    let mut logits = Vec::with_capacity(subset.len());
    for &j in subset {
        let mut z = 0.0;
        for k in 0..d {
            z += q[k] * seq.item(j)[k];
        }
        logits.push(z / scale);
    }
    let mut max = f64::NEG_INFINITY;
    for &z in &logits {
        if z > max {
            max = z;
        }
    }
    let mut total = 0.0;
    for &z in &logits {
        total += (z - max).exp();
    }
    for (i, &j) in subset.iter().enumerate() {
        let w = (logits[i] - max).exp() / total;
        weights[j] = w;
        for k in 0..d {
            interest[k] += w * seq.item(j)[k];
        }
    }
    (interest, weights)
}

#[allow(clippy::needless_range_loop)]
fn naive_bits(family: &HashFamily, x: &[f64]) -> Vec<bool> {
    (0..family.m())
        .map(|k| {
            let p = family.projection(k);
            let mut z = 0.0;
            for i in 0..x.len() {
                z += p[i] * x[i];
            }
            z >= 0.0
        })
        .collect()
}

pub fn oracle_equivalence(cfg: &VerifyConfig, report: &mut VerifyReport) -> Result<()> {
    let s = suite::ORACLES;
    let (mut ta_err, mut sim_err, mut eta_err) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..cfg.oracle_instances as u64 {
        let mut r = stream(cfg, 0x0a, i);
        let l = r.random_range(1..=16);
        let d = r.random_range(2..=8);
        let seq = random_sequence(&mut r, l, d, 3);
        let q = random_unit(&mut r, d);
        let scale = if r.random_bool(0.5) { default_scale(d) } else { 0.5 };

        let all: Vec<usize> = (0..l).collect();
        let (want_i, want_w) = naive_softmax(&q, &seq, &all, scale);
        let got = target_attention(&q, &seq, scale, Weights::Keep)?;
        ta_err = ta_err
            .max(relative_error(&got.interest, &want_i))
            .max(relative_error(got.weights.as_deref().unwrap_or(&[]), &want_w));

        let cat = r.random_range(0..3u32);
        let filtered: Vec<usize> = all.iter().copied().filter(|&j| seq.categories()[j] == cat).collect();
        let (want_i, want_w) = naive_softmax(&q, &seq, &filtered, scale);
        let got = sim_hard(&q, cat, &seq, scale, Weights::Keep)?;
        sim_err = sim_err.max(relative_error(&got.interest, &want_i));
        if !filtered.is_empty() {
            sim_err = sim_err.max(relative_error(got.weights.as_deref().unwrap_or(&[]), &want_w));
        } else if got.weights.is_some() {
            sim_err = f64::INFINITY;
        }

        let family = HashFamily::sample(r.next_u64(), 3 * r.random_range(1..=8), 3, d)?;
        let k = r.random_range(1..=l + 2);
        let qb = naive_bits(&family, &q);
        let mut ranked: Vec<(usize, usize)> = (0..l)
            .map(|j| {
                let sb = naive_bits(&family, seq.item(j));
                (qb.iter().zip(&sb).filter(|(a, b)| a != b).count(), j)
            })
            .collect();
        ranked.sort();
        let mut chosen: Vec<usize> = ranked.iter().take(k).map(|&(_, j)| j).collect();
        chosen.sort_unstable();
        let (want_i, want_w) = naive_softmax(&q, &seq, &chosen, scale);
        let got = eta_topk(&q, &seq, &family, k, scale, Weights::Keep)?;
        eta_err = eta_err
            .max(relative_error(&got.interest, &want_i))
            .max(relative_error(got.weights.as_deref().unwrap_or(&[]), &want_w));
    }
    for (name, err) in [("target attention", ta_err), ("sim-hard", sim_err), ("eta top-k", eta_err)] {
        report.row(s, name.into(), "max_relative_error", err);
        report.gate(s, format!("{name} matches naive oracle"), err <= 1e-6, format!("max relative error {err:.3e}"));
    }
    Ok(())
}

/// A structurally valid table with arbitrary contents.
pub fn random_table(r: &mut impl Rng) -> BucketTable {
    let tau = r.random_range(1..=6usize);
    let rounds = r.random_range(1..=6usize);
    let d = r.random_range(1..=5usize);
    let item_count = r.random_range(0..200u32);
    let rounds = (0..rounds)
        .map(|_| {
            let mut left = item_count;
            let mut round = Vec::new();
            for signature in 0..(1u16 << tau) {
                if left == 0 {
                    break;
                }
                if r.random_bool(0.4) {
                    let count = if signature + 1 == 1 << tau { left } else { r.random_range(1..=left) };
                    left -= count;
                    round.push(Bucket {
                        signature,
                        count,
                        vector: random_unit(r, d).iter().map(|&x| x as f32).collect(),
                    });
                }
            }
            if left > 0 {
                match round.last_mut() {
                    Some(b) => b.count += left,
                    None => round.push(Bucket {
                        signature: 0,
                        count: left,
                        vector: vec![0.0; d],
                    }),
                }
            }
            round
        })
        .collect::<Vec<_>>();
    BucketTable {
        d,
        m: tau * rounds.len(),
        tau,
        user_id: r.next_u64(),
        family_seed: r.next_u64(),
        sequence_version: r.next_u64(),
        item_count,
        rounds,
    }
}

pub fn serving_equivalence(cfg: &VerifyConfig, report: &mut VerifyReport) -> Result<()> {
    let s = suite::SERVING;
    let d = 32;
    let family = HashFamily::sample(cfg.seed ^ 0x5e, 48, 3, d)?;

    // end-to-end over loopback TCP
    let bse = Arc::new(BseService::new(family.clone()));
    let bse_srv = bse_serve(TcpListener::bind("127.0.0.1:0")?, Arc::clone(&bse))?;
    let ctr = Arc::new(CtrService::new(family.clone(), RemoteBse::new(bse_srv.local_addr())));
    let ctr_srv = ctr_serve(TcpListener::bind("127.0.0.1:0")?, Arc::clone(&ctr))?;
    let lengths = [0usize, 1, 3, 17, 64, 200, 500, 1024];
    let mut users = Vec::new();
    for (u, &l) in lengths.iter().enumerate() {
        let inst = InstanceConfig {
            seq_len: l.max(1),
            candidates: 1,
            dim: d,
            users: lengths.len(),
            seed: cfg.seed,
            ..InstanceConfig::default()
        };
        let user = generate_user(&inst, u)?;
        let seq = if l == 0 { BehaviorSequence::empty(d) } else { user.sequence.clone() };
        bse.replace_sequence(user.user_id, seq)?;
        users.push((inst, user));
    }
    let mut client = Client::connect(ctr_srv.local_addr())?;
    let mut worst = 0.0f64;
    let mut hit_mismatch = 0usize;
    for case in 0..cfg.serving_cases {
        let (inst, user) = &users[case % users.len()];
        let b = 1 + (case * 7) % 48;
        let cands = generate_request(&InstanceConfig { candidates: b, ..*inst }, user, case as u64)?;
        let rows: Vec<Vec<f32>> = cands
            .items
            .iter()
            .map(|v| v.iter().map(|&x| x as f32).collect())
            .collect();
        let resp = client.score(ScoreRequest {
            user_id: user.user_id,
            candidates: rows.clone(),
        })?;
        let (_, stored) = bse.sequence(user.user_id)?;
        for (row, got) in rows.iter().zip(&resp.results) {
            let q: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
            let got_i: Vec<f64> = got.interest.iter().map(|&x| f64::from(x)).collect();
            let want = if stored.is_empty() {
                vec![0.0; d]
            } else {
                sdim_attention(&q, &stored, &family, Weights::Skip)?.interest
            };
            if stored.is_empty() && got.hit_rounds != 0 {
                hit_mismatch += 1;
            }
            worst = worst.max(linf(&got_i, &want));
        }
    }
    drop(client);
    ctr_srv.shutdown();
    bse_srv.shutdown();
    report.row(s, format!("cases={}", cfg.serving_cases), "max_linf", worst);
    report.gate(
        s,
        "served interest equals in-process within 1e-6",
        worst <= 1e-6 && hit_mismatch == 0,
        format!("max linf {worst:.3e}, {hit_mismatch} empty-history hits"),
    );

    // fuzzed wire round trips
    let mut mismatched = 0usize;
    let mut panics = 0usize;
    for i in 0..cfg.fuzz_tables as u64 {
        let mut r = stream(cfg, 0xf2, i);
        let t = random_table(&mut r);
        let bytes = serialize_bucket_table(&t)?;
        match deserialize_bucket_table(&bytes) {
            Ok(back) if back == t && serialize_bucket_table(&back)? == bytes => {}
            _ => mismatched += 1,
        }
        let mut mutant = bytes.clone();
        for _ in 0..r.random_range(1..=4) {
            let at = r.random_range(0..mutant.len());
            mutant[at] = r.random();
        }
        mutant.truncate(r.random_range(0..=mutant.len()));
        if catch_unwind(AssertUnwindSafe(|| deserialize_bucket_table(&mutant))).is_err() {
            panics += 1;
        }
    }
    report.gate(
        s,
        "wire round trip byte-identical",
        mismatched == 0,
        format!("{mismatched}/{} fuzzed tables differ", cfg.fuzz_tables),
    );
    report.gate(
        s,
        "corrupted tables never panic",
        panics == 0,
        format!("{panics}/{} mutants panicked", cfg.fuzz_tables),
    );

    // one sequence-hash pass per request, none per candidate
    let d = 128;
    let family = HashFamily::sample(cfg.seed ^ 0x5f, 48, 3, d)?;
    let bse = Arc::new(BseService::new(family.clone()));
    let inst = InstanceConfig {
        seq_len: 1024,
        candidates: 1024,
        dim: d,
        users: 1,
        seed: cfg.seed,
        ..InstanceConfig::default()
    };
    let user = generate_user(&inst, 0)?;
    bse.replace_sequence(user.user_id, user.sequence.clone())?;
    let ctr = CtrService::new(family, Arc::clone(&bse));
    let mut deltas = Vec::new();
    for req in 0..3u64 {
        if req == 2 {
            bse.replace_sequence(user.user_id, user.sequence.clone())?;
        }
        let cands = generate_request(&inst, &user, req)?;
        let flat: Vec<f64> = cands.items.iter().flat_map(|v| v.iter().copied()).collect();
        let (before, before_c) = (bse.metrics().sequence_hash_passes, ctr.metrics().candidate_hash_passes);
        let out = ctr.score(user.user_id, &flat)?;
        debug_assert_eq!(out.len(), 1024);
        deltas.push((
            bse.metrics().sequence_hash_passes - before,
            ctr.metrics().candidate_hash_passes - before_c,
        ));
    }
    // request 0 misses the cache, 1 hits it, 2 follows a sequence update
    let ok = deltas == [(1, 1), (0, 1), (1, 1)];
    report.gate(
        s,
        "one sequence-hash pass per request at B=1024",
        ok,
        format!("(sequence, candidate-batch) passes per request: {deltas:?}"),
    );
    Ok(())
}

/// Sensitivity of the estimate to counting empty rounds as zero instead of
/// excluding them. The direction is unaffected; the magnitude shrinks by the
/// hit fraction.
pub fn empty_round_sensitivity(cfg: &VerifyConfig, report: &mut VerifyReport) -> Result<()> {
    let s = suite::EMPTY_ROUNDS;
    let set = ConvergenceSet::new(cfg)?;
    let mut listing = Vec::new();
    for tau in [3usize, 5, 10] {
        let ex = set.measure(16, tau, EmptyRounds::Exclude)?;
        let zero = set.measure(16, tau, EmptyRounds::CountAsZero)?;
        let param = format!("tau={tau},rounds=16");
        report.row(s, param.clone(), "cosine_exclude", ex.mean);
        report.row(s, param.clone(), "cosine_count_as_zero", zero.mean);
        report.row(s, param.clone(), "norm_exclude", ex.mean_norm);
        report.row(s, param, "norm_count_as_zero", zero.mean_norm);
        listing.push(format!("tau={tau}: norm {:.3} vs {:.3}", ex.mean_norm, zero.mean_norm));
    }
    report.note(s, "exclude vs count-as-zero", true, listing.join("; "));
    Ok(())
}

pub fn performance(cfg: &VerifyConfig, report: &mut VerifyReport) -> Result<()> {
    let s = suite::PERF;
    let (l, d, m, tau) = (cfg.perf_seq_len, cfg.perf_dim, cfg.perf_m, cfg.perf_tau);
    let family = HashFamily::sample(cfg.seed, m, tau, d)?;
    let max_b = cfg.perf_batches.iter().copied().max().unwrap_or(1);
    let inst = InstanceConfig {
        seq_len: l,
        candidates: max_b,
        dim: d,
        users: 1,
        seed: cfg.seed,
        ..InstanceConfig::default()
    };
    let user = generate_user(&inst, 0)?;
    let seq = &user.sequence;
    let cands = generate_request(&inst, &user, 0)?;
    let flat: Vec<f64> = cands.items.iter().flat_map(|v| v.iter().copied()).collect();
    let scale = default_scale(d);
    let table = encode_sequence(seq, &family, user.user_id)?;
    let iters = cfg.perf_iters.max(3);

    // sequence-phase samples are interleaved across batch sizes so drift
    // affects every cell alike
    let mut seq_samples = vec![Vec::with_capacity(iters); cfg.perf_batches.len()];
    for _ in 0..2 {
        std::hint::black_box(encode_sequence(seq, &family, user.user_id)?);
    }
    for _ in 0..iters * 2 {
        for samples in seq_samples.iter_mut() {
            let t = Instant::now();
            std::hint::black_box(encode_sequence(seq, &family, user.user_id)?);
            samples.push(t.elapsed().as_nanos() as f64);
        }
    }

    for (bi, &b) in cfg.perf_batches.iter().enumerate() {
        let block = &flat[..b * d];
        let sdim_request = crate::perf::measure(2, iters * 4, || gather_batch(block, &table, &family));
        let ta_request = crate::perf::measure(1, iters, || {
            block
                .chunks_exact(d)
                .map(|q| target_attention(q, seq, scale, Weights::Skip).map(|r| r.interest[0]))
                .sum::<Result<f64>>()
        });
        let speedup = ta_request.p50_ns / sdim_request.p50_ns;
        let param = format!("L={l},B={b},d={d},m={m},tau={tau}");
        let sequence_phase = Stats::from_samples(&seq_samples[bi]);
        report.row(s, param.clone(), "sequence_phase_p50_ns", sequence_phase.p50_ns);
        report.row(s, param.clone(), "sdim_request_p50_ns", sdim_request.p50_ns);
        report.row(s, param.clone(), "ta_request_p50_ns", ta_request.p50_ns);
        report.row(s, param, "speedup_p50", speedup);
        report.perf.push(PerfCell {
            seq_len: l,
            candidates: b,
            d,
            m,
            tau,
            sequence_phase,
            sdim_request,
            ta_request,
            speedup_p50: speedup,
        });
    }

    if let Some(cell) = report.perf.iter().find(|c| c.candidates == 1024) {
        let speedup = cell.speedup_p50;
        report.gate(
            s,
            "sdim request at least 5x faster than target attention at B=1024",
            speedup >= 5.0,
            format!(
                "TA {:.2} ms vs SDIM {:.3} ms per request: {speedup:.1}x",
                cell.ta_request.p50_ns / 1e6,
                cell.sdim_request.p50_ns / 1e6
            ),
        );
    }
    let p50s: Vec<f64> = report.perf.iter().map(|c| c.sequence_phase.p50_ns).collect();
    if p50s.len() > 1 {
        let (lo, hi) = p50s
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let spread = hi / lo - 1.0;
        report.gate(
            s,
            "sequence phase flat in B within 20%",
            spread <= 0.20,
            format!("p50 spread {:.1}% across B={:?}", spread * 100.0, cfg.perf_batches),
        );
    }
    Ok(())
}
