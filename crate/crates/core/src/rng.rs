//! Counter-based Gaussian streams.
//!
//! Draw `index` of a stream is a pure function of `(seed, domain, index)`: the
//! ChaCha key comes from `(seed, domain)` and `index` selects the 64-bit
//! stream nonce. Samples can therefore be produced in any order, on any
//! thread, and still be bit-identical.

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Domain tag for the receiver noise of the Monte-Carlo estimator.
pub const DOMAIN_NOISE: u64 = 0x6e6f_6973_655f_7631;
/// Domain tag for Rayleigh channel realizations.
pub const DOMAIN_CHANNEL: u64 = 0x6368_616e_5f76_3031;

#[derive(Debug, Clone)]
pub struct GaussianStream {
    base: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64, domain: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.to_le_bytes());
        Self {
            base: ChaCha8Rng::from_seed(key),
        }
    }

    /// `count` circularly symmetric complex Gaussians with variance
    /// `variance` (half per real dimension) for draw `index`.
    pub fn complex(&self, index: u64, count: usize, variance: f64) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(count);
        self.fill_complex(index, variance, &mut out, count);
        out
    }

    pub fn fill_complex(&self, index: u64, variance: f64, out: &mut Vec<Complex64>, count: usize) {
        let mut rng = self.base.clone();
        rng.set_stream(index);
        let scale = (0.5 * variance).sqrt();
        out.clear();
        for _ in 0..count {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            out.push(Complex64::new(re * scale, im * scale));
        }
    }
}
