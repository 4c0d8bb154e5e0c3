//! Statistical checks of the hash-sampling estimator and reproduction of its
//! weight curves.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::Serialize;

use crate::attention::{collision_prob, expected_weights, sdim_attention, BehaviorSequence, Weights};
use crate::error::{Error, Result};
use crate::rng;
use crate::simhash::HashFamily;

/// Tolerance on `Σ w = 1` accepted by [`attention_entropy`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn attention_entropy(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::InvalidDistribution("empty weight vector".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidDistribution(format!("weight {w} is not a finite non-negative number")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
    }
    Ok(-weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * w.ln())
        .sum::<f64>())
}

/// Entropy of the expected-collision weights at each (real-valued) width.
pub fn entropy_vs_tau(q: &[f64], seq: &BehaviorSequence, taus: &[f64]) -> Result<Vec<(f64, f64)>> {
    if seq.len() < 2 {
        return Err(Error::invalid("entropy curve needs at least two items"));
    }
    if taus.iter().any(|t| !(*t > 0.0)) || taus.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::invalid("tau grid must be positive and strictly increasing"));
    }
    taus.iter()
        .map(|&tau| {
            let w = expected_weights(q, seq, tau)?
                .ok_or_else(|| Error::InvalidDistribution(format!("all weights vanish at tau {tau}")))?;
            Ok((tau, attention_entropy(&w)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollisionPoint {
    pub cos: f64,
    pub empirical: f64,
    pub expected: f64,
}

impl CollisionPoint {
    /// `4·√(p(1−p)/trials)` around the expected rate.
    pub fn four_sigma(&self, trials: usize) -> f64 {
        4.0 * (self.expected * (1.0 - self.expected) / trials as f64).sqrt()
    }
}

/// The planar pair `(1, 0)` and `(c, √(1−c²))`, at cosine `c`.
pub fn pair_at_cosine(cos: f64) -> ([f64; 2], [f64; 2]) {
    let c = cos.clamp(-1.0, 1.0);
    ([1.0, 0.0], [c, (1.0 - c * c).max(0.0).sqrt()])
}

/// Empirical round-collision frequency over `trials` independent τ-wide rounds
/// for each cosine in the grid, next to the closed form.
pub fn empirical_collision_curve(
    cos_grid: &[f64],
    tau: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<CollisionPoint>> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    cos_grid
        .iter()
        .enumerate()
        .map(|(g, &cos)| {
            let (a, b) = pair_at_cosine(cos);
            // One family whose rounds are the independent trials.
            let family = HashFamily::sample(rng::mix(seed ^ rng::mix(g as u64)), tau * trials, tau, 2)?;
            let hits = family.signatures(&a)?.collisions(&family.signatures(&b)?);
            Ok(CollisionPoint {
                cos,
                empirical: hits as f64 / trials as f64,
                expected: collision_prob(cos, tau as u32),
            })
        })
        .collect()
}

/// Average of the per-item weights reported by [`sdim_attention`] over
/// `families` independent hash families.
pub fn monte_carlo_sdim_weights(
    q: &[f64],
    seq: &BehaviorSequence,
    m: usize,
    tau: usize,
    families: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; seq.len()];
    let mut used = 0usize;
    for f in 0..families {
        let family = HashFamily::sample(rng::mix(seed.wrapping_add(f as u64)), m, tau, seq.dim())?;
        if let Some(w) = sdim_attention(q, seq, &family, Weights::Keep)?.weights {
            acc.iter_mut().zip(&w).for_each(|(a, x)| *a += x);
            used += 1;
        }
    }
    if used > 0 {
        acc.iter_mut().for_each(|a| *a /= used as f64);
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub x: f64,
    pub sdim_weight: f64,
    pub ta_weight: f64,
}

/// Unnormalized attention weight as a function of the cosine `x`, for both
/// mechanisms; the softmax curve is shifted so both peak at 1 when `x = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveTable {
    pub rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn sdim_column(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sdim_weight).collect()
    }

    pub fn ta_column(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ta_weight).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut buf = String::from("x,sdim_weight,ta_weight\n");
        for r in &self.rows {
            let _ = writeln!(buf, "{},{},{}", sig9(r.x), sig9(r.sdim_weight), sig9(r.ta_weight));
        }
        out.write_all(buf.as_bytes())
    }

    pub fn to_csv(&self) -> String {
        let mut v = Vec::new();
        self.write_csv(&mut v).expect("writing to a Vec cannot fail");
        String::from_utf8(v).expect("csv is ascii")
    }
}

pub fn emit_attention_curves(tau: u32, scale: f64, n_points: usize) -> Result<CurveTable> {
    if n_points < 2 {
        return Err(Error::invalid("need at least two curve points"));
    }
    if !(scale > 0.0) || tau == 0 {
        return Err(Error::invalid("tau and scale must be positive"));
    }
    let last = (n_points - 1) as f64;
    let rows = (0..n_points)
        .map(|i| {
            let x = if i + 1 == n_points { 1.0 } else { -1.0 + 2.0 * i as f64 / last };
            CurveRow {
                x,
                sdim_weight: collision_prob(x, tau),
                ta_weight: ((x - 1.0) / scale).exp(),
            }
        })
        .collect();
    Ok(CurveTable { rows })
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Formats with nine significant digits, `%.9g` style.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.8e}");
        let (mantissa, e) = s.split_once('e').expect("exponent");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::ItemVector;

    fn unit(v: &[f64]) -> ItemVector {
        ItemVector::normalized(v.to_vec()).unwrap()
    }

    #[test]
    fn entropy_reference_values() {
        assert!((attention_entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(attention_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((attention_entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((attention_entropy(&[0.25; 4]).unwrap() - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn entropy_rejects_non_distributions() {
        assert!(matches!(attention_entropy(&[]), Err(Error::InvalidDistribution(_))));
        assert!(attention_entropy(&[0.5, 0.6]).is_err());
        assert!(attention_entropy(&[1.5, -0.5]).is_err());
        assert!(attention_entropy(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn entropy_vs_tau_two_item_case() {
        let q = unit(&[1.0, 0.0]);
        let seq = BehaviorSequence::from_items(vec![unit(&[0.0, 1.0]), unit(&[1.0, 0.0])]).unwrap();
        let h = entropy_vs_tau(&q, &seq, &[1.0, 3.0]).unwrap();
        let h1 = -(1.0f64 / 3.0 * (1.0f64 / 3.0).ln() + 2.0 / 3.0 * (2.0f64 / 3.0).ln());
        let h3 = -(1.0f64 / 9.0 * (1.0f64 / 9.0).ln() + 8.0 / 9.0 * (8.0f64 / 9.0).ln());
        assert!((h[0].1 - h1).abs() < 1e-12 && (h1 - 0.6365).abs() < 1e-4);
        assert!((h[1].1 - h3).abs() < 1e-12 && (h3 - 0.3488).abs() < 1e-4);
    }

    #[test]
    fn entropy_vs_tau_constant_when_items_equal_query() {
        let q = unit(&[0.3, 0.4, 0.5]);
        let seq = BehaviorSequence::from_items(vec![q.clone(); 5]).unwrap();
        for (_, h) in entropy_vs_tau(&q, &seq, &[0.5, 1.0, 2.0, 10.0]).unwrap() {
            assert!((h - 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_vs_tau_validates_grid() {
        let q = unit(&[1.0, 0.0]);
        let seq = BehaviorSequence::from_items(vec![q.clone(), q.clone()]).unwrap();
        assert!(entropy_vs_tau(&q, &seq, &[2.0, 1.0]).is_err());
        assert!(entropy_vs_tau(&q, &seq, &[0.0, 1.0]).is_err());
        let one = BehaviorSequence::from_items(vec![q.clone()]).unwrap();
        assert!(entropy_vs_tau(&q, &one, &[1.0]).is_err());
    }

    #[test]
    fn collision_curve_exact_endpoints() {
        let pts = empirical_collision_curve(&[1.0, -1.0], 3, 2000, 5).unwrap();
        assert_eq!(pts[0].empirical, 1.0);
        assert_eq!(pts[1].empirical, 0.0);
        assert!(empirical_collision_curve(&[0.0], 3, 0, 5).is_err());
    }

    #[test]
    fn curve_table_points() {
        let t = emit_attention_curves(3, 0.5, 201).unwrap();
        assert_eq!(t.rows.len(), 201);
        let first = t.rows[0];
        let mid = t.rows[100];
        let last = t.rows[200];
        assert_eq!((first.x, first.sdim_weight), (-1.0, 0.0));
        assert_eq!((last.x, last.sdim_weight, last.ta_weight), (1.0, 1.0, 1.0));
        assert!(mid.x.abs() < 1e-15);
        assert!((mid.sdim_weight - 0.125).abs() < 1e-12);
        assert!((mid.ta_weight - (-2f64).exp()).abs() < 1e-12);
        assert!((mid.ta_weight - 0.1353).abs() < 1e-4);
        assert!(t.rows.windows(2).all(|p| p[0].x < p[1].x
            && p[0].sdim_weight <= p[1].sdim_weight
            && p[0].ta_weight <= p[1].ta_weight));
        assert!(emit_attention_curves(3, 0.5, 1).is_err());
    }

    #[test]
    fn csv_layout() {
        let csv = emit_attention_curves(3, 0.5, 3).unwrap().to_csv();
        let lines: Vec<&str> = csv.split('\n').collect();
        assert_eq!(lines[0], "x,sdim_weight,ta_weight");
        assert_eq!(lines[2], "0,0.125,0.135335283");
        assert_eq!(lines[3], "1,1,1");
        assert_eq!(lines.len(), 5);
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(sig9(0.1353352832366127), "0.135335283");
        assert_eq!(sig9(-1.0), "-1");
        assert_eq!(sig9(123456789.4), "123456789");
        assert_eq!(sig9(1.5e-7), "1.5e-7");
        assert_eq!(sig9(2.0e12), "2e12");
    }

    #[test]
    fn pearson_of_affine_is_one() {
        let a = [1.0, 2.0, 4.0, 8.0];
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x - 1.0).collect();
        assert!((pearson(&a, &b) - 1.0).abs() < 1e-12);
    }
}
