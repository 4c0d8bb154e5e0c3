//! Minimal wall-clock harness: warm-up, repeated timing, percentile summaries.

use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

/// Nanosecond summary of one measured quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct Stats {
    pub count: usize,
    pub mean_ns: f64,
    pub p50_ns: f64,
    pub p95_ns: f64,
    pub p99_ns: f64,
    pub min_ns: f64,
    pub max_ns: f64,
}

impl Stats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            count: s.len(),
            mean_ns: s.iter().sum::<f64>() / s.len() as f64,
            p50_ns: percentile(&s, 0.50),
            p95_ns: percentile(&s, 0.95),
            p99_ns: percentile(&s, 0.99),
            min_ns: s[0],
            max_ns: s[s.len() - 1],
        }
    }
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Runs `f` `warmup` times untimed, then `iters` times timed.
pub fn measure<T>(warmup: usize, iters: usize, f: impl FnMut() -> T) -> Stats {
    Stats::from_samples(&samples(warmup, iters, f))
}

/// Raw nanosecond timings behind [`measure`]; at least one sample.
pub fn samples<T>(warmup: usize, iters: usize, mut f: impl FnMut() -> T) -> Vec<f64> {
    for _ in 0..warmup {
        black_box(f());
    }
    (0..iters.max(1))
        .map(|_| {
            let start = Instant::now();
            black_box(f());
            start.elapsed().as_nanos() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let st = Stats::from_samples(&s);
        assert_eq!((st.p50_ns, st.p95_ns, st.p99_ns), (50.0, 95.0, 99.0));
        assert_eq!((st.min_ns, st.max_ns, st.mean_ns), (1.0, 100.0, 50.5));
        assert_eq!(Stats::from_samples(&[]).count, 0);
    }

    #[test]
    fn measure_counts_iterations() {
        let mut calls = 0;
        let st = measure(3, 5, || calls += 1);
        assert_eq!(calls, 8);
        assert_eq!(st.count, 5);
    }
}
