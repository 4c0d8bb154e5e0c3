//! (m, τ)-parameterized SimHash.
//!
//! A family holds `m` Gaussian projection directions. Each direction yields one
//! sign bit; consecutive groups of `τ` bits are packed MSB-first into one
//! signature per round, so a family of `m` hashes gives `m / τ` rounds. Two
//! vectors collide in a round exactly when the packed codes are equal.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::vector::dot;

/// Widest supported signature; codes travel as `u16` on the wire.
pub const MAX_TAU: usize = 16;

/// `m` random projection directions of dimension `d`, grouped `tau` at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct HashFamily {
    projections: Vec<f64>,
    m: usize,
    tau: usize,
    d: usize,
    seed: u64,
}

impl HashFamily {
    /// Draws a family whose row `k` comes from the counter-based stream
    /// `(seed, k)`, so identical arguments always give identical projections.
    pub fn sample(seed: u64, m: usize, tau: usize, d: usize) -> Result<Self> {
        if !(1..=MAX_TAU).contains(&tau) {
            return Err(Error::invalid(format!("tau {tau} outside [1, {MAX_TAU}]")));
        }
        if m == 0 || !m.is_multiple_of(tau) {
            return Err(Error::invalid(format!("m = {m} is not a positive multiple of tau = {tau}")));
        }
        if d == 0 {
            return Err(Error::invalid("d must be >= 1"));
        }
        let mut projections = Vec::with_capacity(m * d);
        for k in 0..m {
            projections.extend(Self::projection_row(seed, k, d));
        }
        Ok(Self {
            projections,
            m,
            tau,
            d,
            seed,
        })
    }

    /// Regenerates projection row `k` without building the whole family.
    pub fn projection_row(seed: u64, k: usize, d: usize) -> Vec<f64> {
        let mut stream = rng::stream(seed, rng::domain::PROJECTION, k as u64);
        (0..d).map(|_| StandardNormal.sample(&mut stream)).collect()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rounds(&self) -> usize {
        self.m / self.tau
    }

    pub fn projection(&self, k: usize) -> &[f64] {
        &self.projections[k * self.d..(k + 1) * self.d]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// The `m` sign bits of `x`. A zero dot product counts as positive.
    pub fn hash_codes(&self, x: &[f64]) -> Result<SignBits> {
        self.check_dim(x)?;
        let mut bits = SignBits::zeros(self.m);
        for k in 0..self.m {
            if dot(self.projection(k), x) >= 0.0 {
                bits.set(k, true);
            }
        }
        Ok(bits)
    }

    /// Per-round signatures of `x`; same result as
    /// `signatures(&self.hash_codes(x)?, self.tau())`.
    pub fn signatures(&self, x: &[f64]) -> Result<SignatureSet> {
        self.check_dim(x)?;
        let mut codes = vec![0u16; self.rounds()];
        self.pack_into(x, &mut codes);
        Ok(SignatureSet { codes })
    }

    #[inline]
    fn pack_into(&self, x: &[f64], out: &mut [u16]) {
        let mut rows = self.projections.chunks_exact(self.d);
        for code in out.iter_mut() {
            let mut c = 0u16;
            for row in rows.by_ref().take(self.tau) {
                c = (c << 1) | u16::from(dot(row, x) >= 0.0);
            }
            *code = c;
        }
    }

    /// Hashes `n = items.len() / d` row-major vectors in one pass.
    pub fn signature_matrix(&self, items: &[f64]) -> Result<SignatureMatrix> {
        if !items.len().is_multiple_of(self.d) {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: items.len() % self.d,
            });
        }
        let n = items.len() / self.d;
        let rounds = self.rounds();
        let mut codes = vec![0u16; n * rounds];
        for (x, out) in items.chunks_exact(self.d).zip(codes.chunks_exact_mut(rounds.max(1))) {
            self.pack_into(x, out);
        }
        Ok(SignatureMatrix { rounds, codes })
    }
}

/// Convenience constructor mirroring [`HashFamily::sample`].
pub fn sample_hash_family(seed: u64, m: usize, tau: usize, d: usize) -> Result<HashFamily> {
    HashFamily::sample(seed, m, tau, d)
}

/// `m` sign bits, packed into 64-bit words (bit `k` lives in word `k / 64`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignBits {
    words: Vec<u64>,
    len: usize,
}

impl SignBits {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut out = Self::zeros(bits.len());
        for (k, &b) in bits.iter().enumerate() {
            out.set(k, b);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, k: usize) -> bool {
        assert!(k < self.len, "bit {k} out of range {}", self.len);
        self.words[k / 64] >> (k % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, k: usize, value: bool) {
        assert!(k < self.len, "bit {k} out of range {}", self.len);
        let mask = 1u64 << (k % 64);
        if value {
            self.words[k / 64] |= mask;
        } else {
            self.words[k / 64] &= !mask;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|k| self.get(k))
    }

    /// Number of positions where the two codes differ.
    pub fn hamming(&self, other: &SignBits) -> u32 {
        assert_eq!(self.len, other.len, "hamming distance of unequal-length codes");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        if !self.len.is_multiple_of(64) {
            if let Some(last) = out.words.last_mut() {
                *last &= (1u64 << (self.len % 64)) - 1;
            }
        }
        out
    }
}

/// One signature code per round, each below `2^τ`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignatureSet {
    pub codes: Vec<u16>,
}

impl SignatureSet {
    pub fn rounds(&self) -> usize {
        self.codes.len()
    }

    /// Rounds in which both sets carry the same code.
    pub fn collisions(&self, other: &SignatureSet) -> usize {
        self.codes.iter().zip(&other.codes).filter(|(a, b)| a == b).count()
    }
}

/// Groups sign bits `τ` at a time into per-round codes, MSB first.
pub fn signatures(bits: &SignBits, tau: usize) -> Result<SignatureSet> {
    if !(1..=MAX_TAU).contains(&tau) {
        return Err(Error::invalid(format!("tau {tau} outside [1, {MAX_TAU}]")));
    }
    if !bits.len().is_multiple_of(tau) {
        return Err(Error::invalid(format!(
            "{} bits do not split into rounds of {tau}",
            bits.len()
        )));
    }
    let codes = (0..bits.len() / tau)
        .map(|i| {
            (i * tau..(i + 1) * tau).fold(0u16, |c, k| (c << 1) | u16::from(bits.get(k)))
        })
        .collect();
    Ok(SignatureSet { codes })
}

/// Signatures of many vectors, row-major: row `j` holds the `rounds` codes of item `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureMatrix {
    rounds: usize,
    codes: Vec<u16>,
}

impl SignatureMatrix {
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn len(&self) -> usize {
        self.codes.len().checked_div(self.rounds).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn row(&self, j: usize) -> &[u16] {
        &self.codes[j * self.rounds..(j + 1) * self.rounds]
    }

    #[inline]
    pub fn code(&self, j: usize, round: usize) -> u16 {
        self.codes[j * self.rounds + round]
    }
}
