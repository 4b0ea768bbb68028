//! Seeded, splittable random streams.
//!
//! Each stream is a ChaCha8 generator keyed by the run seed and positioned on
//! its own stream id, so draws for one (agent, purpose) pair never depend on
//! how many other streams exist or in which order they are consumed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Stream id for a `(purpose, index)` pair. Purposes occupy the high
    /// 16 bits so indices (agents, trials) never collide across purposes.
    pub fn derive(seed: u64, purpose: u16, index: u64) -> Self {
        Self::new(seed, (u64::from(purpose) << 48) | (index & ((1 << 48) - 1)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn normal(&mut self, n: usize, mean: f64, std: f64) -> Result<Vec<f64>> {
        if std.is_nan() || std < 0.0 {
            return invalid(format!("standard deviation must be >= 0, got {std}"));
        }
        Ok((0..n).map(|_| mean + std * self.standard_normal()).collect())
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// `k` distinct indices from `[0, n)`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.rng, n, k.min(n)).into_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_is_constant() {
        let mut s = RngStream::new(1, 2);
        assert_eq!(s.normal(4, 3.5, 0.0).unwrap(), vec![3.5; 4]);
    }

    #[test]
    fn negative_std_rejected() {
        assert!(RngStream::new(1, 2).normal(4, 0.0, -1.0).is_err());
    }

    #[test]
    fn same_stream_same_draws() {
        let a = RngStream::new(42, 7).normal(50, 0.0, 1.0).unwrap();
        let b = RngStream::new(42, 7).normal(50, 0.0, 1.0).unwrap();
        assert_eq!(a, b);
        let c = RngStream::new(42, 8).normal(50, 0.0, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn moments_at_large_n() {
        let xs = RngStream::new(2024, 0).normal(100_000, 0.0, 1.0).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn derived_streams_are_disjoint() {
        let a = RngStream::derive(5, 1, 3);
        let b = RngStream::derive(5, 2, 3);
        assert_ne!(a.stream_id(), b.stream_id());
    }
}
