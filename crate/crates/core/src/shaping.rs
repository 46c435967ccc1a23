//! Maxwell–Boltzmann constellation shaping.
//!
//! A shaping assigns `p_i ∝ exp(λ‖x_i‖²)` to the points of a QAM alphabet.
//! The scaling `Δ` and the parameter `λ` are tied together by the unit power
//! constraint `Δ²·E_λ[‖x‖²] = 1`; [`solve_lambda`] inverts that relation.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{qam_alphabet, qam_side, AntennaShaping, JointConstellation};

/// Distance kept from the endpoints of the feasible `Δ` interval.
pub const DELTA_GUARD: f64 = 1e-9;

const NEWTON_MAX_ITER: usize = 100;

/// Probabilities `p_i = exp(λ‖x_i‖²) / Σ_k exp(λ‖x_k‖²)`.
pub fn mb_probs(lambda: f64, alphabet: &[Complex64]) -> Result<Vec<f64>> {
    if !lambda.is_finite() {
        return Err(Error::NonFinite("lambda"));
    }
    if alphabet.is_empty() {
        return Err(crate::error::invalid("alphabet", "empty"));
    }
    let exponents: Vec<f64> = alphabet.iter().map(|x| lambda * x.norm_sqr()).collect();
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = exponents.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Mean and variance of `‖x‖²` under the shaping with parameter `lambda`.
pub fn energy_moments(lambda: f64, alphabet: &[Complex64]) -> Result<(f64, f64)> {
    let probs = mb_probs(lambda, alphabet)?;
    let mean: f64 = probs
        .iter()
        .zip(alphabet)
        .map(|(p, x)| p * x.norm_sqr())
        .sum();
    let var: f64 = probs
        .iter()
        .zip(alphabet)
        .map(|(p, x)| p * (x.norm_sqr() - mean).powi(2))
        .sum();
    Ok((mean, var))
}

pub fn mean_energy(lambda: f64, alphabet: &[Complex64]) -> Result<f64> {
    energy_moments(lambda, alphabet).map(|(m, _)| m)
}

/// Feasible scaling interval `(1/(√2(√M−1)), 1/√2)` for square M-QAM.
pub fn delta_range(order: usize) -> Result<(f64, f64)> {
    let side = qam_side(order)? as f64;
    Ok((
        1.0 / (std::f64::consts::SQRT_2 * (side - 1.0)),
        std::f64::consts::FRAC_1_SQRT_2,
    ))
}

/// Scaling of the uniform distribution, `√(3/(2(M−1)))`.
pub fn uniform_delta(order: usize) -> f64 {
    (3.0 / (2.0 * (order as f64 - 1.0))).sqrt()
}

/// Finds `λ` with `E_λ[‖x‖²] = Δ⁻²`.
///
/// Safeguarded Newton on `g(λ) = E_λ[‖x‖²] − Δ⁻²` (with `g′ = Var_λ[‖x‖²]`)
/// inside a sign-change bracket, falling back to bisection.
pub fn solve_lambda(delta_target: f64, alphabet: &[Complex64]) -> Result<f64> {
    if !delta_target.is_finite() {
        return Err(Error::NonFinite("delta"));
    }
    let (e_min, e_max) = alphabet
        .iter()
        .map(|x| x.norm_sqr())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e), hi.max(e))
        });
    let lo = 1.0 / e_max.sqrt() + DELTA_GUARD;
    let hi = 1.0 / e_min.sqrt() - DELTA_GUARD;
    if !(delta_target >= lo && delta_target <= hi) {
        return Err(Error::OutOfRange {
            name: "delta",
            value: delta_target,
            lo,
            hi,
        });
    }
    let target = delta_target.powi(-2);
    let tol = 1e-12 * target.max(1.0);
    let g = |lambda: f64| -> Result<(f64, f64)> {
        let (m, v) = energy_moments(lambda, alphabet)?;
        Ok((m - target, v))
    };

    let (g0, _) = g(0.0)?;
    if g0.abs() <= tol {
        return Ok(0.0);
    }
    // bracket [a, b] with g(a) < 0 < g(b); g is increasing in λ
    let (mut a, mut b) = if g0 < 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    for _ in 0..200 {
        if g0 < 0.0 {
            if g(b)?.0 > 0.0 {
                break;
            }
            a = b;
            b *= 2.0;
        } else {
            if g(a)?.0 < 0.0 {
                break;
            }
            b = a;
            a *= 2.0;
        }
    }

    let mut x = 0.0_f64.clamp(a, b);
    for _ in 0..NEWTON_MAX_ITER {
        let (gx, slope) = g(x)?;
        if gx.abs() <= tol {
            return Ok(x);
        }
        if gx < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let mut step = if slope > 0.0 { -gx / slope } else { f64::NAN };
        // damp until the iterate stays strictly inside the bracket
        let mut halvings = 0;
        while !(x + step > a && x + step < b) && halvings < 60 {
            step *= 0.5;
            halvings += 1;
        }
        x = if step.is_finite() && x + step > a && x + step < b {
            x + step
        } else {
            0.5 * (a + b)
        };
    }
    // bisection fallback
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let (gm, _) = g(mid)?;
        if gm.abs() <= tol || (b - a) <= f64::EPSILON * mid.abs().max(1.0) {
            return Ok(mid);
        }
        if gm < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// `−Σ p log2 p` with `0·log 0 = 0`.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

pub fn input_entropy(joint: &JointConstellation) -> f64 {
    entropy_bits(joint.probs())
}

impl AntennaShaping {
    /// Uniform distribution with the matching scaling `√(3/(2(M−1)))`.
    pub fn uniform(order: usize) -> Result<Self> {
        let alphabet = qam_alphabet(order)?;
        let m = alphabet.len();
        Ok(Self {
            order,
            alphabet,
            lambda: 0.0,
            delta: uniform_delta(order),
            probs: vec![1.0 / m as f64; m],
        })
    }

    /// Shaping whose unit-power scaling is `delta`.
    pub fn from_delta(order: usize, delta: f64) -> Result<Self> {
        if delta == uniform_delta(order) {
            return Self::uniform(order);
        }
        let alphabet = qam_alphabet(order)?;
        let lambda = solve_lambda(delta, &alphabet)?;
        let probs = mb_probs(lambda, &alphabet)?;
        Ok(Self {
            order,
            alphabet,
            lambda,
            delta,
            probs,
        })
    }

    /// Shaping for a given `λ`, with `Δ` set for unit power.
    pub fn from_lambda(order: usize, lambda: f64) -> Result<Self> {
        let alphabet = qam_alphabet(order)?;
        let probs = mb_probs(lambda, &alphabet)?;
        let energy: f64 = probs
            .iter()
            .zip(&alphabet)
            .map(|(p, x)| p * x.norm_sqr())
            .sum();
        Ok(Self {
            order,
            alphabet,
            lambda,
            delta: energy.sqrt().recip(),
            probs,
        })
    }

    pub fn entropy_bits(&self) -> f64 {
        entropy_bits(&self.probs)
    }
}
