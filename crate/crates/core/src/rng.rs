//! Counter-based random streams.
//!
//! Every random quantity in a run is drawn from a ChaCha8 stream keyed by the
//! run seed and a stream id. Stream ids partition the run: the adversary, each
//! epoch's perturbation, and each epoch's solver get disjoint streams, so
//! changing how many numbers one consumer draws never shifts another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const ADVERSARY_STREAM: u64 = 1;
/// Epoch `tau` perturbations use `PERTURBATION_STREAM_BASE + tau`.
pub const PERTURBATION_STREAM_BASE: u64 = 1 << 32;
/// Epoch `tau` solver randomness uses `SOLVER_STREAM_BASE + tau`.
pub const SOLVER_STREAM_BASE: u64 = 2 << 32;
pub const ANALYSIS_STREAM: u64 = 3 << 32;

pub fn stream(seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// SplitMix64 finalizer; used to derive child seeds from a master seed.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for item `index` of a family rooted at `seed`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Standard exponential by inverse CDF, `-ln(1 - u)` with `u ~ U[0, 1)`.
pub fn standard_exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln()
}

pub fn uniform_in<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Uniformly distributed unit vector in `R^dim`.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// FNV-1a over the bit patterns of a float slice; stable across platforms.
pub fn digest(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, 3).random()).collect();
        let mut r1 = stream(7, 3);
        let mut r2 = stream(7, 4);
        let x: Vec<u64> = (0..4).map(|_| r1.random()).collect();
        let y: Vec<u64> = (0..4).map(|_| r2.random()).collect();
        assert_eq!(a[0], x[0]);
        assert_ne!(x, y);
    }

    #[test]
    fn exponential_is_nonnegative() {
        let mut rng = stream(1, 0);
        for _ in 0..1000 {
            assert!(standard_exponential(&mut rng) >= 0.0);
        }
    }

    #[test]
    fn digest_depends_on_bits() {
        assert_ne!(digest(&[0.0]), digest(&[-0.0]));
        assert_eq!(digest(&[1.0, 2.0]), digest(&[1.0, 2.0]));
    }
}
