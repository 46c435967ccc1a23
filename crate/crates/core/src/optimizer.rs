//! Alternating maximization of `I(x; ȳ)` over `Σ_G`, `Φ` and the shapings.
//!
//! Every accept/reject decision compares estimates computed with the same
//! [`McConfig`], so with common random numbers the objective seen by the
//! optimizer is a deterministic function and the recorded step values are
//! exactly non-decreasing.

use std::collections::HashMap;

use crate::baselines::waterfilling;
use crate::error::{invalid, Error, Result};
use crate::linalg::{expm_skew_hermitian, polar_unitary, unitarity_defect, CMatrix};
use crate::mi::{estimate_mi, grad_power, grad_rotation, McConfig, MiValue};
use crate::model::{
    build_joint, AntennaShaping, EquivalentChannel, JointConstellation, PrecoderState,
};
use crate::shaping::{delta_range, uniform_delta, DELTA_GUARD};

/// Re-orthonormalize `Φ` once `‖ΦΦᴴ − I‖_F` exceeds this.
const REORTHO_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    /// Sufficient-increase coefficient of the Armijo test, in `(0, 1)`.
    pub armijo_c: f64,
    /// Backtracking factor, in `(0, 1)`.
    pub armijo_shrink: f64,
    pub initial_step: f64,
    /// A line search giving up below this step ends the sub-optimizer.
    pub min_step: f64,
    /// Spacing of the `Δ` grid scanned by the distribution step.
    pub delta_grid_step: f64,
    /// Outer-loop (and distribution sweep) threshold on the MI gain, bits.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Cap on gradient iterations per power or rotation call.
    pub max_inner: usize,
    /// A power or rotation call also stops once an accepted step gains less
    /// than this many bits; along directions where the true MI is flat the
    /// fixed noise draw otherwise keeps yielding tiny spurious gains.
    pub inner_tol: f64,
    /// Start the power allocation from classic waterfilling instead of equal power.
    pub waterfilling_init: bool,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            initial_step: 1.0,
            min_step: 1e-6,
            delta_grid_step: 0.01,
            outer_tol: 1e-3,
            max_outer: 20,
            max_inner: 50,
            inner_tol: 1e-4,
            waterfilling_init: false,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("must lie in (0, 1), got {v}")))
            }
        };
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive, got {v}")))
            }
        };
        open_unit("armijo_c", self.armijo_c)?;
        open_unit("armijo_shrink", self.armijo_shrink)?;
        positive("initial_step", self.initial_step)?;
        positive("min_step", self.min_step)?;
        positive("delta_grid_step", self.delta_grid_step)?;
        positive("outer_tol", self.outer_tol)?;
        positive("inner_tol", self.inner_tol)?;
        if self.max_outer == 0 {
            return Err(invalid("max_outer", "must be at least 1"));
        }
        if self.max_inner == 0 {
            return Err(invalid("max_inner", "must be at least 1"));
        }
        Ok(())
    }
}

/// Result of one sub-optimizer call.
#[derive(Debug, Clone)]
pub struct StageOutcome<T> {
    pub value: T,
    /// Same-seed MI at `value`.
    pub mi: f64,
    /// Gradient iterations (or coordinate sweeps).
    pub iterations: usize,
    /// Same-seed MI after every accepted update, in order.
    pub accepted: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptReport {
    /// MI before the first and after every outer iteration.
    pub mi_trace: Vec<MiValue>,
    /// Same-seed MI at the start and after every accepted update.
    pub step_trace: Vec<f64>,
    pub precoder: PrecoderState,
    pub shapings: Vec<AntennaShaping>,
    pub outer_iterations: usize,
    pub rotation_iterations: usize,
    pub power_iterations: usize,
    pub distribution_sweeps: usize,
}

impl OptReport {
    pub fn final_mi(&self) -> MiValue {
        *self.mi_trace.last().expect("trace holds the initial value")
    }
}

/// Clips negative entries to zero and rescales onto `Σ p² = budget`.
pub fn project_power(candidate: &[f64], budget: f64) -> Result<Vec<f64>> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(invalid("budget", format!("must be positive, got {budget}")));
    }
    if candidate.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("power candidate"));
    }
    let clipped: Vec<f64> = candidate.iter().map(|&p| p.max(0.0)).collect();
    let energy: f64 = clipped.iter().map(|p| p * p).sum();
    if energy <= 0.0 {
        return Err(Error::DegenerateProjection);
    }
    let scale = (budget / energy).sqrt();
    Ok(clipped.into_iter().map(|p| p * scale).collect())
}

fn objective(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    shapings: &[AntennaShaping],
    mc: &McConfig,
) -> Result<f64> {
    let joint = build_joint(shapings)?;
    Ok(estimate_mi(eq, prec, &joint, mc)?.bits)
}

/// Projected gradient ascent on the power amplitudes.
pub fn optimize_power(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    shapings: &[AntennaShaping],
    mc: &McConfig,
    cfg: &OptConfig,
) -> Result<StageOutcome<PrecoderState>> {
    optimize_power_for_joint(eq, prec, &build_joint(shapings)?, mc, cfg)
}

/// [`optimize_power`] for an arbitrary finite constellation.
pub fn optimize_power_for_joint(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    joint: &JointConstellation,
    mc: &McConfig,
    cfg: &OptConfig,
) -> Result<StageOutcome<PrecoderState>> {
    cfg.validate()?;
    let f0 = estimate_mi(eq, prec, joint, mc)?.bits;
    power_stage(eq, prec.clone(), f0, joint, mc, cfg)
}

/// Backtracking search along a fixed direction. The first step passing the
/// Armijo test is refined by further shrinking for as long as the value keeps
/// strictly improving, so an overshoot past the optimum (to a mirror point of
/// similar value) is not taken when a shorter step does better.
///
/// `eval` returns `None` for an infeasible step.
fn line_search<T>(
    f: f64,
    slope: f64,
    cfg: &OptConfig,
    mut eval: impl FnMut(f64) -> Result<Option<(T, f64)>>,
) -> Result<Option<(T, f64)>> {
    let mut step = cfg.initial_step;
    let mut best: Option<(T, f64)> = None;
    while step >= cfg.min_step {
        let trial = eval(step)?;
        match (&best, trial) {
            (None, Some((x, v))) if v >= f + cfg.armijo_c * step * slope => best = Some((x, v)),
            (Some((_, bv)), Some((x, v))) if v > *bv => best = Some((x, v)),
            (Some(_), _) => break,
            (None, _) => {}
        }
        step *= cfg.armijo_shrink;
    }
    Ok(best)
}

fn power_stage(
    eq: &EquivalentChannel,
    mut prec: PrecoderState,
    mut f: f64,
    joint: &JointConstellation,
    mc: &McConfig,
    cfg: &OptConfig,
) -> Result<StageOutcome<PrecoderState>> {
    let budget = prec.budget();
    let mut accepted = Vec::new();
    let mut iterations = 0;
    while iterations < cfg.max_inner {
        iterations += 1;
        let grad = grad_power(eq, &prec, joint, mc)?;
        let mean = grad.iter().sum::<f64>() / grad.len() as f64;
        let direction: Vec<f64> = grad.iter().map(|g| g - mean).collect();
        let slope: f64 = direction.iter().map(|d| d * d).sum();
        if slope == 0.0 {
            break;
        }
        let found = line_search(f, slope, cfg, |step| {
            let raw: Vec<f64> = prec
                .power_diag()
                .iter()
                .zip(&direction)
                .map(|(p, d)| p + step * d)
                .collect();
            let Ok(projected) = project_power(&raw, budget) else {
                return Ok(None);
            };
            let candidate = prec.with_power(projected)?;
            let value = estimate_mi(eq, &candidate, joint, mc)?.bits;
            Ok(Some((candidate, value)))
        })?;
        let mut keep_going = false;
        if let Some((candidate, value)) = found {
            prec = candidate;
            keep_going = value - f >= cfg.inner_tol;
            f = value;
            accepted.push(f);
        }
        if !keep_going {
            break;
        }
    }
    Ok(StageOutcome {
        value: prec,
        mi: f,
        iterations,
        accepted,
    })
}

/// Steepest ascent on the unitary group: `Φ ← exp(μR)·Φ` with
/// `R = ΓΦᴴ − ΦΓᴴ`.
pub fn optimize_rotation(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    shapings: &[AntennaShaping],
    mc: &McConfig,
    cfg: &OptConfig,
) -> Result<StageOutcome<PrecoderState>> {
    optimize_rotation_for_joint(eq, prec, &build_joint(shapings)?, mc, cfg)
}

/// [`optimize_rotation`] for an arbitrary finite constellation.
pub fn optimize_rotation_for_joint(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    joint: &JointConstellation,
    mc: &McConfig,
    cfg: &OptConfig,
) -> Result<StageOutcome<PrecoderState>> {
    cfg.validate()?;
    let f0 = estimate_mi(eq, prec, joint, mc)?.bits;
    rotation_stage(eq, prec.clone(), f0, joint, mc, cfg)
}

/// Skew-Hermitian ascent direction `ΓΦᴴ − ΦΓᴴ`.
pub fn riemannian_direction(gradient: &CMatrix, rotation: &CMatrix) -> CMatrix {
    let a = gradient * rotation.adjoint();
    let b = a.adjoint();
    a - b
}

/// One rotation update `exp(step·R)·Φ`, re-orthonormalized when it drifts.
pub fn rotate(rotation: &CMatrix, direction: &CMatrix, step: f64) -> CMatrix {
    let next = expm_skew_hermitian(direction, step) * rotation;
    if unitarity_defect(&next) > REORTHO_THRESHOLD {
        polar_unitary(&next)
    } else {
        next
    }
}

fn rotation_stage(
    eq: &EquivalentChannel,
    mut prec: PrecoderState,
    mut f: f64,
    joint: &JointConstellation,
    mc: &McConfig,
    cfg: &OptConfig,
) -> Result<StageOutcome<PrecoderState>> {
    let mut accepted = Vec::new();
    let mut iterations = 0;
    while iterations < cfg.max_inner {
        iterations += 1;
        let grad = grad_rotation(eq, &prec, joint, mc)?;
        let direction = riemannian_direction(&grad, prec.rotation());
        let slope = direction.norm_squared();
        if slope == 0.0 {
            break;
        }
        let found = line_search(f, slope, cfg, |step| {
            let candidate = prec.with_rotation(rotate(prec.rotation(), &direction, step))?;
            let value = estimate_mi(eq, &candidate, joint, mc)?.bits;
            Ok(Some((candidate, value)))
        })?;
        let mut keep_going = false;
        if let Some((candidate, value)) = found {
            prec = candidate;
            keep_going = value - f >= cfg.inner_tol;
            f = value;
            accepted.push(f);
        }
        if !keep_going {
            break;
        }
    }
    Ok(StageOutcome {
        value: prec,
        mi: f,
        iterations,
        accepted,
    })
}

/// Grid of candidate scalings for one antenna: `Δ_u + k·δ` strictly inside the
/// feasible interval, ordered by distance from the uniform point `Δ_u`.
pub fn delta_grid(order: usize, step: f64) -> Result<Vec<f64>> {
    let (lo, hi) = delta_range(order)?;
    let (lo, hi) = (lo + DELTA_GUARD, hi - DELTA_GUARD);
    if lo >= hi {
        return Ok(Vec::new());
    }
    let center = uniform_delta(order);
    let k_min = ((lo - center) / step).ceil() as i64;
    let k_max = ((hi - center) / step).floor() as i64;
    let mut ks: Vec<i64> = (k_min..=k_max).collect();
    ks.sort_by_key(|k| (k.abs(), *k));
    Ok(ks
        .into_iter()
        .map(|k| center + k as f64 * step)
        .filter(|d| *d >= lo && *d <= hi)
        .collect())
}

/// Coordinate search over the per-antenna scalings `Δ_j`.
pub fn optimize_distribution(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    shapings: &[AntennaShaping],
    mc: &McConfig,
    cfg: &OptConfig,
) -> Result<StageOutcome<Vec<AntennaShaping>>> {
    cfg.validate()?;
    let f0 = objective(eq, prec, shapings, mc)?;
    distribution_stage(eq, prec, shapings.to_vec(), f0, mc, cfg)
}

fn distribution_stage(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    mut shapings: Vec<AntennaShaping>,
    mut f: f64,
    mc: &McConfig,
    cfg: &OptConfig,
) -> Result<StageOutcome<Vec<AntennaShaping>>> {
    let grids: Vec<Vec<f64>> = shapings
        .iter()
        .map(|s| delta_grid(s.order(), cfg.delta_grid_step))
        .collect::<Result<_>>()?;
    let mut accepted = Vec::new();
    let mut sweeps = 0;
    // same seed and precoder throughout, so a Δ vector always maps to the same value
    let key = |s: &[AntennaShaping]| s.iter().map(|a| a.delta().to_bits()).collect::<Vec<u64>>();
    let mut seen: HashMap<Vec<u64>, f64> = HashMap::new();
    seen.insert(key(&shapings), f);
    if grids.iter().all(|g| g.is_empty()) {
        return Ok(StageOutcome {
            value: shapings,
            mi: f,
            iterations: 0,
            accepted,
        });
    }
    while sweeps < cfg.max_outer {
        sweeps += 1;
        let sweep_start = f;
        for j in 0..shapings.len() {
            let center = uniform_delta(shapings[j].order());
            let mut best = shapings[j].clone();
            let mut best_f = f;
            let mut best_dist = (best.delta() - center).abs();
            for &delta in &grids[j] {
                if delta == shapings[j].delta() {
                    continue;
                }
                let candidate = AntennaShaping::from_delta(shapings[j].order(), delta)?;
                let mut trial = shapings.clone();
                trial[j] = candidate.clone();
                let value = match seen.get(&key(&trial)) {
                    Some(&v) => v,
                    None => {
                        let v = objective(eq, prec, &trial, mc)?;
                        seen.insert(key(&trial), v);
                        v
                    }
                };
                let dist = (delta - center).abs();
                if value > best_f || (value == best_f && dist < best_dist) {
                    best = candidate;
                    best_f = value;
                    best_dist = dist;
                }
            }
            if best.delta() != shapings[j].delta() {
                shapings[j] = best;
                f = best_f;
                accepted.push(f);
            }
        }
        if f - sweep_start <= cfg.outer_tol {
            break;
        }
    }
    Ok(StageOutcome {
        value: shapings,
        mi: f,
        iterations: sweeps,
        accepted,
    })
}

/// Starting point of the alternating loop: equal power (or waterfilling),
/// `Φ = I` and uniform shapings.
pub fn initial_state(
    eq: &EquivalentChannel,
    order: usize,
    budget: f64,
    cfg: &OptConfig,
) -> Result<(PrecoderState, Vec<AntennaShaping>)> {
    let n = eq.dim();
    let mut prec = PrecoderState::initial(n, budget)?;
    if cfg.waterfilling_init {
        let wf = waterfilling(eq.gains(), budget, eq.noise_variance())?;
        prec = prec.with_power(wf)?;
    }
    let shapings = vec![AntennaShaping::uniform(order)?; n];
    Ok((prec, shapings))
}

/// Alternates rotation, power and distribution updates until the outer MI
/// gain drops to `outer_tol` or `max_outer` passes have run.
pub fn joint_optimize(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    shapings: &[AntennaShaping],
    mc: &McConfig,
    cfg: &OptConfig,
) -> Result<OptReport> {
    alternate(eq, prec, shapings, mc, cfg, true)
}

pub(crate) fn alternate(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    shapings: &[AntennaShaping],
    mc: &McConfig,
    cfg: &OptConfig,
    shape: bool,
) -> Result<OptReport> {
    cfg.validate()?;
    if shapings.len() != eq.dim() {
        return Err(Error::Dimension {
            what: "shapings",
            expected: eq.dim(),
            got: shapings.len(),
        });
    }
    let mut prec = prec.clone();
    let mut shapings = shapings.to_vec();
    let first = estimate_mi(eq, &prec, &build_joint(&shapings)?, mc)?;
    let mut f = first.bits;
    let mut report = OptReport {
        mi_trace: vec![first],
        step_trace: vec![f],
        precoder: prec.clone(),
        shapings: shapings.clone(),
        outer_iterations: 0,
        rotation_iterations: 0,
        power_iterations: 0,
        distribution_sweeps: 0,
    };
    while report.outer_iterations < cfg.max_outer {
        report.outer_iterations += 1;
        let start = f;

        let joint = build_joint(&shapings)?;
        let rot = rotation_stage(eq, prec, f, &joint, mc, cfg)?;
        report.rotation_iterations += rot.iterations;
        report.step_trace.extend(&rot.accepted);
        prec = rot.value;
        f = rot.mi;

        let pow = power_stage(eq, prec, f, &joint, mc, cfg)?;
        report.power_iterations += pow.iterations;
        report.step_trace.extend(&pow.accepted);
        prec = pow.value;
        f = pow.mi;

        if shape {
            let dist = distribution_stage(eq, &prec, shapings, f, mc, cfg)?;
            report.distribution_sweeps += dist.iterations;
            report.step_trace.extend(&dist.accepted);
            shapings = dist.value;
            f = dist.mi;
        }

        let value = estimate_mi(eq, &prec, &build_joint(&shapings)?, mc)?;
        debug_assert_eq!(value.bits.to_bits(), f.to_bits());
        report.mi_trace.push(value);
        if f - start <= cfg.outer_tol {
            break;
        }
    }
    report.precoder = prec;
    report.shapings = shapings;
    Ok(report)
}
