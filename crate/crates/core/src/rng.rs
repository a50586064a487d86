//! Seeded random number streams for reproducible parallel trials.
//!
//! Each Monte Carlo trial owns an independent ChaCha stream derived from the
//! master seed and the trial index, so batches can be distributed across
//! workers in any order and still regenerate bit-identical draws. Gaussian
//! samples come from a Box-Muller transform over the stream's uniforms.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::f64::consts::PI;

/// A deterministic per-trial random stream.
#[derive(Debug, Clone)]
pub struct TrialRng {
    inner: ChaCha8Rng,
}

impl TrialRng {
    /// Stream `stream` of the generator seeded with `master_seed`. Streams
    /// with different indices never overlap.
    pub fn from_master(master_seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer on `lo..=hi`.
    pub fn integer_in(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..=hi)
    }

    /// Two independent standard normal draws (Box-Muller).
    pub fn standard_normal_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform(); // (0, 1]: keeps the log finite
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * PI * u2;
        (radius * angle.cos(), radius * angle.sin())
    }

    /// Circularly symmetric complex Gaussian with `E|z|^2 = variance`.
    pub fn complex_gaussian(&mut self, variance: f64) -> Complex64 {
        let (re, im) = self.standard_normal_pair();
        let scale = (variance / 2.0).sqrt();
        Complex64::new(re * scale, im * scale)
    }

    /// `count` distinct values sampled uniformly from `1..=pool` (partial
    /// Fisher-Yates).
    pub fn sample_distinct(&mut self, pool: usize, count: usize) -> Vec<usize> {
        assert!(count <= pool);
        let mut items: Vec<usize> = (1..=pool).collect();
        for i in 0..count {
            let j = self.integer_in(i, pool - 1);
            items.swap(i, j);
        }
        items.truncate(count);
        items
    }
}
