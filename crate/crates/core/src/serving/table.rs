use std::collections::BTreeMap;

use crate::attention::BehaviorSequence;
use crate::error::{Error, Result};
use crate::simhash::{HashFamily, SignatureSet};
use crate::vector::dot;

/// Norm tolerance for stored bucket vectors (they travel as f32).
pub const BUCKET_NORM_TOLERANCE: f64 = 1e-5;

/// One signature's bucket within a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub signature: u16,
    /// Number of behavior items hashed into this bucket.
    pub count: u32,
    /// ℓ2-normalized sum of those items.
    pub vector: Vec<f32>,
}

/// Candidate-independent precomputation for one user's sequence: for every
/// round, the non-empty buckets sorted by signature.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketTable {
    pub d: usize,
    pub m: usize,
    pub tau: usize,
    pub user_id: u64,
    pub family_seed: u64,
    pub sequence_version: u64,
    /// Sequence length `L`; every round's counts sum to it.
    pub item_count: u32,
    pub rounds: Vec<Vec<Bucket>>,
}

impl BucketTable {
    pub fn empty(family: &HashFamily, user_id: u64) -> Self {
        Self {
            d: family.dim(),
            m: family.m(),
            tau: family.tau(),
            user_id,
            family_seed: family.seed(),
            sequence_version: 0,
            item_count: 0,
            rounds: vec![Vec::new(); family.rounds()],
        }
    }

    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }

    pub fn bucket_count(&self) -> usize {
        self.rounds.iter().map(Vec::len).sum()
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.sequence_version = version;
        self
    }

    /// Bucket for `signature` in `round`, if any item landed there.
    pub fn lookup(&self, round: usize, signature: u16) -> Option<&Bucket> {
        let buckets = &self.rounds[round];
        buckets
            .binary_search_by_key(&signature, |b| b.signature)
            .ok()
            .map(|i| &buckets[i])
    }

    /// Checks that `family` produced this table.
    pub fn check_family(&self, family: &HashFamily) -> Result<()> {
        let ours = (self.m, self.tau, self.d, self.family_seed);
        let theirs = (family.m(), family.tau(), family.dim(), family.seed());
        if ours != theirs {
            return Err(Error::FamilyMismatch(format!(
                "table has (m, tau, d, seed) = {ours:?}, family has {theirs:?}"
            )));
        }
        Ok(())
    }

    /// Structural invariants: shape, sorted codes below `2^τ`, per-round
    /// counts summing to `item_count`, unit bucket vectors.
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.tau > crate::simhash::MAX_TAU || self.m == 0 || !self.m.is_multiple_of(self.tau) {
            return Err(Error::invalid(format!("bad (m, tau) = ({}, {})", self.m, self.tau)));
        }
        if self.rounds.len() != self.m / self.tau {
            return Err(Error::invalid(format!(
                "{} rounds stored, expected {}",
                self.rounds.len(),
                self.m / self.tau
            )));
        }
        let limit = 1u32 << self.tau;
        for (i, round) in self.rounds.iter().enumerate() {
            let mut total = 0u64;
            for (k, b) in round.iter().enumerate() {
                if u32::from(b.signature) >= limit {
                    return Err(Error::invalid(format!("round {i}: signature {} >= 2^tau", b.signature)));
                }
                if k > 0 && round[k - 1].signature >= b.signature {
                    return Err(Error::invalid(format!("round {i}: signatures not strictly ascending")));
                }
                if b.count == 0 {
                    return Err(Error::invalid(format!("round {i}: empty bucket stored")));
                }
                if b.vector.len() != self.d {
                    return Err(Error::DimensionMismatch {
                        expected: self.d,
                        found: b.vector.len(),
                    });
                }
                let n = b.vector.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
                // A zero vector only arises from exact projection ties.
                if n != 0.0 && (n - 1.0).abs() > BUCKET_NORM_TOLERANCE {
                    return Err(Error::invalid(format!("round {i}: bucket norm {n}")));
                }
                total += u64::from(b.count);
            }
            if total != u64::from(self.item_count) {
                return Err(Error::invalid(format!(
                    "round {i}: counts sum to {total}, expected {}",
                    self.item_count
                )));
            }
        }
        Ok(())
    }
}

/// Buckets every behavior item by its per-round signature. One hashing pass
/// over the sequence; no candidate information is needed.
pub fn encode_sequence(seq: &BehaviorSequence, family: &HashFamily, user_id: u64) -> Result<BucketTable> {
    if seq.dim() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            found: seq.dim(),
        });
    }
    let item_count = u32::try_from(seq.len()).map_err(|_| Error::invalid("sequence longer than u32::MAX"))?;
    let signatures = family.signature_matrix(seq.flat())?;
    let d = seq.dim();
    let mut table = BucketTable::empty(family, user_id);
    table.item_count = item_count;

    for (round, out) in table.rounds.iter_mut().enumerate() {
        let mut sums: BTreeMap<u16, (Vec<f64>, u32)> = BTreeMap::new();
        for (j, item) in seq.items().enumerate() {
            let (sum, count) = sums
                .entry(signatures.code(j, round))
                .or_insert_with(|| (vec![0.0; d], 0));
            sum.iter_mut().zip(item).for_each(|(acc, x)| *acc += x);
            *count += 1;
        }
        *out = sums
            .into_iter()
            .map(|(signature, (sum, count))| {
                let n = dot(&sum, &sum).sqrt();
                let scale = if n == 0.0 { 0.0 } else { 1.0 / n };
                Bucket {
                    signature,
                    count,
                    vector: sum.iter().map(|x| (x * scale) as f32).collect(),
                }
            })
            .collect();
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatherResult {
    pub interest: Vec<f64>,
    /// Rounds in which the candidate's signature found a bucket.
    pub hit_rounds: usize,
}

/// Averages the candidate's matching buckets over the rounds that hit.
pub fn gather_interest(candidate: &[f64], table: &BucketTable, family: &HashFamily) -> Result<GatherResult> {
    table.check_family(family)?;
    Ok(gather_signed(&family.signatures(candidate)?, table))
}

/// [`gather_interest`] for a candidate whose signatures are already known.
/// Touches only `rounds` buckets; the cost does not depend on `L`.
pub fn gather_signed(signatures: &SignatureSet, table: &BucketTable) -> GatherResult {
    gather_codes(&signatures.codes, table)
}

/// Hashes a row-major `B × d` candidate block in one pass and gathers each row.
pub fn gather_batch(candidates: &[f64], table: &BucketTable, family: &HashFamily) -> Result<Vec<GatherResult>> {
    table.check_family(family)?;
    let signatures = family.signature_matrix(candidates)?;
    Ok((0..signatures.len()).map(|i| gather_codes(signatures.row(i), table)).collect())
}

pub(crate) fn gather_codes(codes: &[u16], table: &BucketTable) -> GatherResult {
    let mut interest = vec![0.0; table.d];
    let mut hit_rounds = 0;
    for (round, &code) in codes.iter().enumerate() {
        if let Some(b) = table.lookup(round, code) {
            hit_rounds += 1;
            interest.iter_mut().zip(&b.vector).for_each(|(acc, &x)| *acc += f64::from(x));
        }
    }
    if hit_rounds > 0 {
        interest.iter_mut().for_each(|v| *v /= hit_rounds as f64);
    }
    GatherResult { interest, hit_rounds }
}
