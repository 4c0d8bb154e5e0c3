use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of an item embedding's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// A unit-norm item embedding (one behavior item or one candidate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ItemVector(Vec<f64>);

impl ItemVector {
    /// Wraps `values`, checking that they are finite and already unit-norm.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("item vector must have d >= 1"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate at {i}")));
        }
        let n = norm(&values);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::invalid(format!("item vector norm {n} is not 1")));
        }
        Ok(Self(values))
    }

    /// Scales `values` to unit norm.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        let n = norm(&values);
        if n == 0.0 {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        values.iter_mut().for_each(|v| *v /= n);
        Self::new(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// The antipodal vector.
    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }
}

impl Deref for ItemVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ItemVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ItemVector> for Vec<f64> {
    fn from(v: ItemVector) -> Self {
        v.0
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Normalizes in place; leaves a zero vector untouched and returns false.
pub fn l2_normalize(v: &mut [f64]) -> bool {
    let n = norm(v);
    if n == 0.0 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
