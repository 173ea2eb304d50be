//! Small Monte Carlo helpers shared by the estimators.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, StreamRng};

pub const MC_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        if n == 0 {
            return Self {
                mean: 0.0,
                se: 0.0,
                n,
            };
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            se: (var / nf).sqrt(),
            n,
        }
    }

    pub fn from_values(values: &[f64]) -> Self {
        let sum: f64 = values.iter().sum();
        let sum_sq: f64 = values.iter().map(|v| v * v).sum();
        Self::from_sums(sum, sum_sq, values.len())
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Mean of `f` over `n` draws. Chunk `c` uses stream `stream_base + c` of
/// `seed`, and chunk sums are reduced in index order, so the result does not
/// depend on the thread count.
pub fn parallel_mean<F>(n: usize, seed: u64, stream_base: u64, f: F) -> MeanEstimate
where
    F: Fn(&mut StreamRng) -> f64 + Sync,
{
    let chunks = n.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, stream_base + c as u64);
            let len = MC_CHUNK.min(n - c * MC_CHUNK);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..len {
                let v = f(&mut rng);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = partial
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    MeanEstimate::from_sums(s, s2, n)
}

/// One-sided sign test: `P(Bin(n, 1/2) >= k)`.
pub fn sign_test_p_value(k: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    // log-space binomial coefficients keep n in the thousands exact enough
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_choose = 0.0;
    let mut total = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            total += (ln_choose + ln_half_n).exp();
        }
    }
    total.min(1.0)
}
