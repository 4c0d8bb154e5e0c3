//! Interest-vector estimators over a behavior sequence.
//!
//! [`target_attention`] is the exact softmax oracle. [`sdim_attention`] is the
//! hash-sampling estimator: per round it sums the behavior items whose
//! signature equals the candidate's, normalizes that bucket sum, and averages
//! across rounds. [`expected_attention`] is its closed-form expectation, and
//! the remaining functions are the retrieval and pooling baselines it is
//! compared against.

use crate::error::{Error, Result};
use crate::simhash::{HashFamily, SignBits, SignatureMatrix, SignatureSet};
use crate::vector::{dot, l2_normalize, ItemVector};

/// A user's behavior items plus the category id of each.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSequence {
    d: usize,
    items: Vec<f64>,
    categories: Vec<u32>,
}

impl BehaviorSequence {
    pub fn new(items: Vec<ItemVector>, categories: Vec<u32>) -> Result<Self> {
        if items.len() != categories.len() {
            return Err(Error::invalid(format!(
                "{} items but {} categories",
                items.len(),
                categories.len()
            )));
        }
        let d = match items.first() {
            Some(first) => first.dim(),
            None => return Err(Error::invalid("use BehaviorSequence::empty for L = 0")),
        };
        let mut seq = Self::empty(d);
        for (item, cat) in items.into_iter().zip(categories) {
            seq.push(&item, cat)?;
        }
        Ok(seq)
    }

    /// All items in category 0.
    pub fn from_items(items: Vec<ItemVector>) -> Result<Self> {
        let n = items.len();
        Self::new(items, vec![0; n])
    }

    pub fn empty(d: usize) -> Self {
        Self {
            d,
            items: Vec::new(),
            categories: Vec::new(),
        }
    }

    pub fn push(&mut self, item: &ItemVector, category: u32) -> Result<()> {
        if item.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: item.dim(),
            });
        }
        self.items.extend_from_slice(item);
        self.categories.push(category);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn item(&self, j: usize) -> &[f64] {
        &self.items[j * self.d..(j + 1) * self.d]
    }

    pub fn items(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.items.chunks_exact(self.d)
    }

    /// Row-major `L × d` item matrix.
    pub fn flat(&self) -> &[f64] {
        &self.items
    }

    pub fn categories(&self) -> &[u32] {
        &self.categories
    }

    /// Items at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::empty(self.d);
        for &j in indices {
            out.items.extend_from_slice(self.item(j));
            out.categories.push(self.categories[j]);
        }
        out
    }
}

/// Whether an estimator should also report per-item weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weights {
    #[default]
    Skip,
    Keep,
}

/// An interest vector and, on request, the per-item mass behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    pub interest: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl AttentionResult {
    fn zero(d: usize) -> Self {
        Self {
            interest: vec![0.0; d],
            weights: None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.interest.iter().all(|&v| v == 0.0)
    }
}

pub fn default_scale(d: usize) -> f64 {
    (d as f64).sqrt()
}

fn check_query(q: &[f64], seq: &BehaviorSequence) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    if q.len() != seq.dim() {
        return Err(Error::DimensionMismatch {
            expected: seq.dim(),
            found: q.len(),
        });
    }
    Ok(())
}

/// Interest as `Σ_j w_j s_j` for non-negative `raw` weights; `None` when they sum to zero.
fn weighted_sum(seq: &BehaviorSequence, mut raw: Vec<f64>, weights: Weights) -> AttentionResult {
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return AttentionResult::zero(seq.dim());
    }
    raw.iter_mut().for_each(|w| *w /= total);
    let mut interest = vec![0.0; seq.dim()];
    for (s, &w) in seq.items().zip(&raw) {
        if w != 0.0 {
            interest.iter_mut().zip(s).for_each(|(acc, x)| *acc += w * x);
        }
    }
    AttentionResult {
        interest,
        weights: (weights == Weights::Keep).then_some(raw),
    }
}

/// Exact target attention: `softmax(q·s_j / scale)`-weighted sum of the items.
pub fn target_attention(
    q: &[f64],
    seq: &BehaviorSequence,
    scale: f64,
    weights: Weights,
) -> Result<AttentionResult> {
    check_query(q, seq)?;
    if !(scale > 0.0) {
        return Err(Error::invalid(format!("scale {scale} must be positive")));
    }
    let logits: Vec<f64> = seq.items().map(|s| dot(q, s) / scale).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw = logits.into_iter().map(|z| (z - max).exp()).collect();
    Ok(weighted_sum(seq, raw, weights))
}

/// How a round's bucket sum is turned into that round's contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the bucket sum's ℓ2 norm.
    #[default]
    L2,
    /// Divide by the number of items in the bucket.
    Count,
}

/// Treatment of rounds in which no behavior item shares the candidate's signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyRounds {
    /// Average only over rounds with a non-empty bucket.
    #[default]
    Exclude,
    /// Average over every round, empty ones contributing the zero vector.
    CountAsZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SdimConfig {
    pub normalization: Normalization,
    pub empty_rounds: EmptyRounds,
    pub weights: Weights,
}

/// A behavior sequence hashed once under a family, ready to serve any number of candidates.
#[derive(Debug, Clone)]
pub struct HashedSequence<'a> {
    seq: &'a BehaviorSequence,
    family: &'a HashFamily,
    signatures: SignatureMatrix,
}

impl<'a> HashedSequence<'a> {
    pub fn new(seq: &'a BehaviorSequence, family: &'a HashFamily) -> Result<Self> {
        if seq.dim() != family.dim() {
            return Err(Error::DimensionMismatch {
                expected: family.dim(),
                found: seq.dim(),
            });
        }
        let signatures = family.signature_matrix(seq.flat())?;
        Ok(Self {
            seq,
            family,
            signatures,
        })
    }

    pub fn signatures(&self) -> &SignatureMatrix {
        &self.signatures
    }

    pub fn attend(&self, q: &[f64], config: &SdimConfig) -> Result<AttentionResult> {
        check_query(q, self.seq)?;
        let q_sig = self.family.signatures(q)?;
        Ok(self.attend_signed(&q_sig, config))
    }

    fn attend_signed(&self, q_sig: &SignatureSet, config: &SdimConfig) -> AttentionResult {
        let d = self.seq.dim();
        let rounds = self.family.rounds();
        let mut interest = vec![0.0; d];
        let mut coef = vec![0.0; self.seq.len()];
        let mut members = Vec::with_capacity(self.seq.len());
        let mut bucket = vec![0.0; d];
        let mut hit = 0usize;

        for (round, &code) in q_sig.codes.iter().enumerate() {
            members.clear();
            members.extend((0..self.seq.len()).filter(|&j| self.signatures.code(j, round) == code));
            if members.is_empty() {
                continue;
            }
            hit += 1;
            bucket.iter_mut().for_each(|v| *v = 0.0);
            for &j in &members {
                bucket.iter_mut().zip(self.seq.item(j)).for_each(|(b, x)| *b += x);
            }
            let divisor = match config.normalization {
                Normalization::L2 => crate::vector::norm(&bucket),
                Normalization::Count => members.len() as f64,
            };
            if divisor == 0.0 {
                continue;
            }
            interest.iter_mut().zip(&bucket).for_each(|(acc, b)| *acc += b / divisor);
            for &j in &members {
                coef[j] += 1.0 / divisor;
            }
        }

        let denominator = match config.empty_rounds {
            EmptyRounds::Exclude => hit,
            EmptyRounds::CountAsZero => rounds,
        };
        if hit == 0 {
            return AttentionResult::zero(d);
        }
        interest.iter_mut().for_each(|v| *v /= denominator as f64);

        let weights = match config.weights {
            Weights::Skip => None,
            Weights::Keep => {
                let total: f64 = coef.iter().sum();
                (total > 0.0).then(|| coef.iter().map(|c| c / total).collect())
            }
        };
        AttentionResult { interest, weights }
    }
}

/// Hash-sampling attention with the default configuration (ℓ2 buckets, empty rounds excluded).
pub fn sdim_attention(
    q: &[f64],
    seq: &BehaviorSequence,
    family: &HashFamily,
    weights: Weights,
) -> Result<AttentionResult> {
    let config = SdimConfig {
        weights,
        ..SdimConfig::default()
    };
    sdim_attention_with(q, seq, family, &config)
}

pub fn sdim_attention_with(
    q: &[f64],
    seq: &BehaviorSequence,
    family: &HashFamily,
    config: &SdimConfig,
) -> Result<AttentionResult> {
    check_query(q, seq)?;
    HashedSequence::new(seq, family)?.attend(q, config)
}

/// Scores many candidates against one sequence, hashing the sequence once.
pub fn sdim_attention_batch(
    candidates: &[ItemVector],
    seq: &BehaviorSequence,
    family: &HashFamily,
    config: &SdimConfig,
) -> Result<Vec<AttentionResult>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let hashed = HashedSequence::new(seq, family)?;
    candidates.iter().map(|q| hashed.attend(q, config)).collect()
}

/// The τ = 0 limit: every item collides every round, leaving `ℓ2(Σ_j s_j)`.
pub fn sdim_attention_tau0(seq: &BehaviorSequence, weights: Weights) -> Result<AttentionResult> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut interest = vec![0.0; seq.dim()];
    for s in seq.items() {
        interest.iter_mut().zip(s).for_each(|(acc, x)| *acc += x);
    }
    if !l2_normalize(&mut interest) {
        return Ok(AttentionResult::zero(seq.dim()));
    }
    let l = seq.len() as f64;
    Ok(AttentionResult {
        interest,
        weights: (weights == Weights::Keep).then(|| vec![1.0 / l; seq.len()]),
    })
}

/// Round-collision probability of two unit vectors with cosine `cos_sim`:
/// `(1 − arccos(cos_sim)/π)^τ`.
pub fn collision_prob(cos_sim: f64, tau: u32) -> f64 {
    single_collision(cos_sim).powi(tau as i32)
}

/// [`collision_prob`] for a real-valued width, as used by the entropy analysis.
pub fn collision_prob_real(cos_sim: f64, tau: f64) -> f64 {
    single_collision(cos_sim).powf(tau)
}

#[inline]
fn single_collision(cos_sim: f64) -> f64 {
    1.0 - cos_sim.clamp(-1.0, 1.0).acos() / std::f64::consts::PI
}

/// Normalized expected-collision weights at real width `tau`; `None` when all are zero.
pub fn expected_weights(q: &[f64], seq: &BehaviorSequence, tau: f64) -> Result<Option<Vec<f64>>> {
    check_query(q, seq)?;
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau {tau} must be positive")));
    }
    let raw: Vec<f64> = seq.items().map(|s| collision_prob_real(dot(q, s), tau)).collect();
    let total: f64 = raw.iter().sum();
    Ok((total > 0.0).then(|| raw.into_iter().map(|w| w / total).collect()))
}

/// Closed-form expectation of [`sdim_attention`] as the number of rounds grows.
pub fn expected_attention(
    q: &[f64],
    seq: &BehaviorSequence,
    tau: u32,
    weights: Weights,
) -> Result<AttentionResult> {
    check_query(q, seq)?;
    if tau == 0 {
        return Err(Error::invalid("tau must be positive"));
    }
    let raw = seq.items().map(|s| collision_prob(dot(q, s), tau)).collect();
    Ok(weighted_sum(seq, raw, weights))
}

pub fn mean_pooling(seq: &BehaviorSequence, weights: Weights) -> Result<AttentionResult> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let l = seq.len() as f64;
    let mut interest = vec![0.0; seq.dim()];
    for s in seq.items() {
        interest.iter_mut().zip(s).for_each(|(acc, x)| *acc += x / l);
    }
    Ok(AttentionResult {
        interest,
        weights: (weights == Weights::Keep).then(|| vec![1.0 / l; seq.len()]),
    })
}

/// Runs target attention on `selected` and scatters weights back to full length.
fn attend_subset(
    q: &[f64],
    seq: &BehaviorSequence,
    selected: &[usize],
    scale: f64,
    weights: Weights,
) -> Result<AttentionResult> {
    if selected.is_empty() {
        return Ok(AttentionResult::zero(seq.dim()));
    }
    let sub = seq.select(selected);
    let mut out = target_attention(q, &sub, scale, weights)?;
    if let Some(w) = out.weights.take() {
        let mut full = vec![0.0; seq.len()];
        for (&j, &wj) in selected.iter().zip(&w) {
            full[j] = wj;
        }
        out.weights = Some(full);
    }
    Ok(out)
}

/// SIM (hard): target attention over the items sharing the candidate's category.
pub fn sim_hard(
    q: &[f64],
    q_category: u32,
    seq: &BehaviorSequence,
    scale: f64,
    weights: Weights,
) -> Result<AttentionResult> {
    check_query(q, seq)?;
    let selected: Vec<usize> = (0..seq.len())
        .filter(|&j| seq.categories()[j] == q_category)
        .collect();
    attend_subset(q, seq, &selected, scale, weights)
}

/// A sequence's m-bit SimHash codes, computed once for top-k Hamming retrieval.
#[derive(Debug, Clone)]
pub struct EtaIndex<'a> {
    seq: &'a BehaviorSequence,
    family: &'a HashFamily,
    codes: Vec<SignBits>,
}

impl<'a> EtaIndex<'a> {
    pub fn new(seq: &'a BehaviorSequence, family: &'a HashFamily) -> Result<Self> {
        let codes = seq.items().map(|s| family.hash_codes(s)).collect::<Result<_>>()?;
        Ok(Self { seq, family, codes })
    }

    /// Indices of the `k` items nearest to `q` in Hamming distance, ties to
    /// the lower index, returned in ascending index order.
    pub fn select(&self, q: &[f64], k: usize) -> Result<Vec<usize>> {
        check_query(q, self.seq)?;
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        let q_bits = self.family.hash_codes(q)?;
        let mut ranked: Vec<(u32, usize)> = self
            .codes
            .iter()
            .enumerate()
            .map(|(j, b)| (q_bits.hamming(b), j))
            .collect();
        if k < ranked.len() {
            ranked.select_nth_unstable(k - 1);
            ranked.truncate(k);
        }
        let mut selected: Vec<usize> = ranked.into_iter().map(|(_, j)| j).collect();
        selected.sort_unstable();
        Ok(selected)
    }

    pub fn attend(&self, q: &[f64], k: usize, scale: f64, weights: Weights) -> Result<AttentionResult> {
        let selected = self.select(q, k)?;
        attend_subset(q, self.seq, &selected, scale, weights)
    }
}

pub fn eta_select(q: &[f64], seq: &BehaviorSequence, family: &HashFamily, k: usize) -> Result<Vec<usize>> {
    check_query(q, seq)?;
    EtaIndex::new(seq, family)?.select(q, k)
}

/// ETA: target attention over the `k` items closest in Hamming distance of SimHash codes.
pub fn eta_topk(
    q: &[f64],
    seq: &BehaviorSequence,
    family: &HashFamily,
    k: usize,
    scale: f64,
    weights: Weights,
) -> Result<AttentionResult> {
    check_query(q, seq)?;
    EtaIndex::new(seq, family)?.attend(q, k, scale, weights)
}
