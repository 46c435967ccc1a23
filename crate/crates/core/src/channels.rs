//! Channel instances: the fixed 2×2 test channel and seeded Rayleigh fading.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::linalg::CMatrix;
use crate::model::PhysicalChannel;
use crate::rng::{GaussianStream, DOMAIN_CHANNEL};

/// `H = [[2, 1], [1, 2]]`.
pub fn constant_channel() -> PhysicalChannel {
    PhysicalChannel::from_real_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).expect("finite 2x2 matrix")
}

/// i.i.d. `CN(0, 1)` entries, a pure function of `(seed, index)`.
pub fn rayleigh_sample(n_r: usize, n_t: usize, seed: u64, index: u64) -> Result<PhysicalChannel> {
    if n_r == 0 || n_t == 0 {
        return Err(invalid("dims", "n_r and n_t must be at least 1"));
    }
    let draws = GaussianStream::new(seed, DOMAIN_CHANNEL).complex(index, n_r * n_t, 1.0);
    PhysicalChannel::new(CMatrix::from_row_slice(n_r, n_t, &draws))
}

/// Per-channel results and their plain mean, one value per curve point.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleCurve {
    pub per_channel: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Sample standard deviation across channels (zero for a single channel).
    pub spread: Vec<f64>,
}

/// Evaluates `evaluate(index, channel)` on `count` sampled channels and
/// averages point by point in channel-index order.
pub fn ensemble_average<S, F>(count: usize, sampler: S, evaluate: F) -> Result<EnsembleCurve>
where
    S: Fn(u64) -> Result<PhysicalChannel> + Sync,
    F: Fn(u64, &PhysicalChannel) -> Result<Vec<f64>> + Sync,
{
    if count == 0 {
        return Err(invalid("count", "must be at least 1"));
    }
    let per_channel: Vec<Vec<f64>> = (0..count as u64)
        .into_par_iter()
        .map(|k| sampler(k).and_then(|h| evaluate(k, &h)))
        .collect::<Result<_>>()?;
    let points = per_channel[0].len();
    if per_channel.iter().any(|c| c.len() != points) {
        return Err(invalid("evaluate", "curves differ in length"));
    }
    let n = count as f64;
    let mean: Vec<f64> = (0..points)
        .map(|j| per_channel.iter().map(|c| c[j]).sum::<f64>() / n)
        .collect();
    let spread = (0..points)
        .map(|j| {
            if count < 2 {
                return 0.0;
            }
            let var = per_channel
                .iter()
                .map(|c| (c[j] - mean[j]).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            var.sqrt()
        })
        .collect();
    Ok(EnsembleCurve {
        per_channel,
        mean,
        spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EquivalentChannel;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_channel_properties() {
        let h = constant_channel();
        let m = h.entries();
        assert_eq!(m, &m.transpose());
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        assert_abs_diff_eq!(det.re, 3.0, epsilon = 1e-15);
        let eq = EquivalentChannel::from_physical(&h, 1.0, true).unwrap();
        assert_abs_diff_eq!(eq.gains()[0], 1.3416, epsilon = 5e-5);
        assert_abs_diff_eq!(eq.gains()[1], 0.4472, epsilon = 5e-5);
    }

    #[test]
    fn rayleigh_is_deterministic_per_index() {
        let a = rayleigh_sample(2, 2, 9, 4).unwrap();
        assert_eq!(a, rayleigh_sample(2, 2, 9, 4).unwrap());
        assert_ne!(a, rayleigh_sample(2, 2, 9, 5).unwrap());
        assert_eq!(rayleigh_sample(3, 2, 9, 0).unwrap().entries().shape(), (3, 2));
    }

    #[test]
    fn rayleigh_entries_have_unit_variance() {
        let n = 100_000u64;
        let mut acc = [0.0; 4];
        for k in 0..n {
            let h = rayleigh_sample(2, 2, 123, k).unwrap();
            for (a, z) in acc.iter_mut().zip(h.entries().iter()) {
                *a += z.norm_sqr();
            }
        }
        for a in acc {
            assert!((a / n as f64 - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn averaging_examples() {
        let sampler = |k| rayleigh_sample(2, 2, 1, k);
        let single = ensemble_average(1, sampler, |_, h| Ok(vec![h.entries()[(0, 0)].re])).unwrap();
        assert_eq!(single.mean, vec![rayleigh_sample(2, 2, 1, 0).unwrap().entries()[(0, 0)].re]);
        let constant = ensemble_average(7, sampler, |_, _| Ok(vec![2.5, -1.0])).unwrap();
        assert_eq!(constant.mean, vec![2.5, -1.0]);
        assert_eq!(constant.spread, vec![0.0, 0.0]);
        assert!(ensemble_average(0, sampler, |_, _| Ok(vec![])).is_err());
    }
}
