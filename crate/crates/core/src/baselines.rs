//! Reference power allocations and the Gaussian-input capacity.

use std::f64::consts::LN_2;

use crate::error::{invalid, Error, Result};
use crate::mi::{McConfig, ScalarOracle};
use crate::model::{AntennaShaping, EquivalentChannel};
use crate::optimizer::{alternate, initial_state, project_power, OptConfig, OptReport};

/// `√(P/n)` on every stream.
pub fn equal_power(n: usize, budget: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("n", "at least one stream required"));
    }
    if !(budget > 0.0) {
        return Err(invalid("budget", format!("must be positive, got {budget}")));
    }
    Ok(vec![(budget / n as f64).sqrt(); n])
}

fn check_gains(gains: &[f64], budget: f64, noise_variance: f64) -> Result<()> {
    if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(invalid("gains", "must be finite and non-negative"));
    }
    if gains.iter().all(|&g| g == 0.0) {
        return Err(Error::ZeroGains);
    }
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(invalid("budget", format!("must be positive, got {budget}")));
    }
    if !(noise_variance > 0.0) || !noise_variance.is_finite() {
        return Err(invalid("noise_variance", "must be positive and finite"));
    }
    Ok(())
}

/// Classic waterfilling, returned as amplitudes: `p_i² = max(0, w − σ²/g_i²)`
/// with the water level `w` set by the budget.
pub fn waterfilling(gains: &[f64], budget: f64, noise_variance: f64) -> Result<Vec<f64>> {
    check_gains(gains, budget, noise_variance)?;
    let floors: Vec<f64> = gains
        .iter()
        .map(|&g| {
            if g > 0.0 {
                noise_variance / (g * g)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| floors[a].total_cmp(&floors[b]));
    // shrink the active set until the weakest active floor sits below the level
    let mut active = order.len();
    let level = loop {
        let sum: f64 = order[..active].iter().map(|&i| floors[i]).sum();
        let level = (budget + sum) / active as f64;
        if level > floors[order[active - 1]] || active == 1 {
            break level;
        }
        active -= 1;
    };
    let powers: Vec<f64> = floors
        .iter()
        .map(|&f| (level - f).max(0.0).sqrt())
        .collect();
    project_power(&powers, budget)
}

/// `Σ_i log2(1 + g_i²·p_i²/σ²)`.
pub fn gaussian_capacity(gains: &[f64], power: &[f64], noise_variance: f64) -> f64 {
    gains
        .iter()
        .zip(power)
        .map(|(g, p)| (g * g * p * p / noise_variance).ln_1p())
        .sum::<f64>()
        / LN_2
}

/// Scalar-channel input model used by [`mercury_waterfilling_with`].
pub trait ScalarInput {
    /// Mutual information in bits at linear SNR `snr`.
    fn mi(&self, snr: f64) -> Result<f64>;
    /// `dI/dsnr` in bits.
    fn dmi(&self, snr: f64) -> Result<f64>;
}

/// Gaussian input: `I = log2(1 + snr)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianInput;

impl ScalarInput for GaussianInput {
    fn mi(&self, snr: f64) -> Result<f64> {
        Ok(snr.ln_1p() / LN_2)
    }

    fn dmi(&self, snr: f64) -> Result<f64> {
        Ok(1.0 / ((1.0 + snr) * LN_2))
    }
}

/// Discrete input evaluated with the quadrature oracle; the derivative comes
/// from the I-MMSE relation `dI/dsnr = mmse / ln 2`.
#[derive(Debug, Clone)]
pub struct DiscreteInput<'a> {
    pub shaping: AntennaShaping,
    pub oracle: &'a ScalarOracle,
}

impl ScalarInput for DiscreteInput<'_> {
    fn mi(&self, snr: f64) -> Result<f64> {
        self.oracle.mi_at_snr(snr, &self.shaping)
    }

    fn dmi(&self, snr: f64) -> Result<f64> {
        Ok(self.oracle.mmse_at_snr(snr, &self.shaping)? / LN_2)
    }
}

/// Root of a decreasing function on `[a, b]` by the Illinois method.
fn decreasing_root(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    x_tol: f64,
) -> Result<f64> {
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa <= 0.0 {
        return Ok(a);
    }
    if fb >= 0.0 {
        return Ok(b);
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let x = (a * fb - b * fa) / (fb - fa);
        let x = if x > a && x < b { x } else { 0.5 * (a + b) };
        let fx = f(x)?;
        if fx == 0.0 || (b - a) <= x_tol {
            return Ok(x);
        }
        if fx > 0.0 {
            a = x;
            fa = fx;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = x;
            fb = fx;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
    }
    Ok(0.5 * (a + b))
}

/// Power per stream that maximizes `Σ_i I(g_i²·π_i/σ²)` subject to
/// `Σ π_i = P`, found from the KKT water level: every active stream has the
/// same marginal MI per unit power `(g_i²/σ²)·I′(g_i²π_i/σ²) = ν`.
///
/// Returned as amplitudes `√π_i`.
pub fn mercury_waterfilling_with<S: ScalarInput>(
    gains: &[f64],
    budget: f64,
    noise_variance: f64,
    input: &S,
) -> Result<Vec<f64>> {
    check_gains(gains, budget, noise_variance)?;
    let coeffs: Vec<f64> = gains.iter().map(|g| g * g / noise_variance).collect();
    let marginal = |i: usize, power: f64| -> Result<f64> {
        Ok(coeffs[i] * input.dmi(coeffs[i] * power)?)
    };
    let power_tol = 1e-14 * budget;
    let allocate = |level: f64| -> Result<Vec<f64>> {
        (0..coeffs.len())
            .map(|i| {
                if coeffs[i] == 0.0 {
                    return Ok(0.0);
                }
                decreasing_root(|p| Ok(marginal(i, p)? - level), 0.0, budget, power_tol)
            })
            .collect()
    };
    let excess = |log_level: f64| -> Result<f64> {
        Ok(allocate(log_level.exp())?.iter().sum::<f64>() - budget)
    };
    let top = (0..coeffs.len())
        .map(|i| marginal(i, 0.0))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = top.ln();
    let mut lo = hi - 1.0;
    while excess(lo)? < 0.0 {
        lo -= 2.0 * (hi - lo);
        if lo < -700.0 {
            return Err(Error::Numerical("mercury water level not bracketed".into()));
        }
    }
    // excess decreases in the level
    let level = decreasing_root(excess, lo, hi, 1e-14)?.exp();
    let powers = allocate(level)?;
    project_power(&powers.iter().map(|p| p.sqrt()).collect::<Vec<_>>(), budget)
}

/// Mercury-waterfilling for uniform square-QAM inputs of the given order.
pub fn mercury_waterfilling(
    gains: &[f64],
    budget: f64,
    noise_variance: f64,
    order: usize,
) -> Result<Vec<f64>> {
    let input = DiscreteInput {
        shaping: AntennaShaping::uniform(order)?,
        oracle: ScalarOracle::shared(),
    };
    mercury_waterfilling_with(gains, budget, noise_variance, &input)
}

/// KKT residual of an allocation: relative spread of the marginal MI per unit
/// power over active streams, plus any excess of an inactive stream's
/// marginal over the common level.
pub fn kkt_residual<S: ScalarInput>(
    gains: &[f64],
    power: &[f64],
    noise_variance: f64,
    input: &S,
    active_floor: f64,
) -> Result<f64> {
    let mut active = Vec::new();
    let mut inactive = Vec::new();
    for (g, p) in gains.iter().zip(power) {
        let c = g * g / noise_variance;
        let m = c * input.dmi(c * p * p)?;
        if p * p > active_floor {
            active.push(m);
        } else {
            inactive.push(m);
        }
    }
    let hi = active.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = active.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = active.iter().sum::<f64>() / active.len() as f64;
    let spread = (hi - lo) / mean;
    let violation = inactive
        .iter()
        .map(|m| ((m - lo) / mean).max(0.0))
        .fold(0.0, f64::max);
    Ok(spread.max(violation))
}

/// Precoder optimized for uniform inputs: the alternating loop with the
/// distribution step disabled and every `Δ_j` pinned to the uniform value.
pub fn uniform_input_precoder(
    eq: &EquivalentChannel,
    order: usize,
    budget: f64,
    mc: &McConfig,
    cfg: &OptConfig,
) -> Result<OptReport> {
    let (prec, shapings) = initial_state(eq, order, budget, cfg)?;
    alternate(eq, &prec, &shapings, mc, cfg, false)
}
