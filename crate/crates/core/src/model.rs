//! Channel, precoder and constellation data model.
//!
//! The physical channel `y = H·G·Δx + v` is reduced through the SVD of `H` to
//! the parallel model `ȳ = Σ_H·Σ_G·Φ·Δx + v`, where `Σ_H` holds the singular
//! values of `H`, `Σ_G` is a non-negative diagonal power allocation and `Φ` a
//! unitary rotation. Everything downstream works on that parallel model.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::linalg::{identity, unitarity_defect, CMatrix};

/// Relative tolerance on `Σ power² = budget`.
pub const BUDGET_TOL: f64 = 1e-10;
/// Tolerance on `‖ΦΦᴴ − I‖_F`.
pub const UNITARY_TOL: f64 = 1e-10;

/// Fading matrix `H` of size `N_r × N_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalChannel {
    entries: CMatrix,
}

impl PhysicalChannel {
    pub fn new(entries: CMatrix) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(invalid("channel", "matrix must be at least 1x1"));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("channel matrix"));
        }
        Ok(Self { entries })
    }

    /// Builds a real-valued channel from row slices.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n_r = rows.len();
        let n_t = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n_t) {
            return Err(invalid("channel", "ragged rows"));
        }
        Self::new(CMatrix::from_fn(n_r, n_t, |i, j| {
            Complex64::new(rows[i][j], 0.0)
        }))
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn n_r(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.entries.ncols()
    }
}

/// Result of [`svd_reduce`]: `H = left · diag(gains) · rightᴴ`.
#[derive(Debug, Clone)]
pub struct SvdReduction {
    /// Singular values, non-increasing, `min(N_r, N_t)` of them.
    pub gains: Vec<f64>,
    /// `N_r × N_min` left singular vectors (`U_H`).
    pub left: CMatrix,
    /// `N_t × N_min` right singular vectors (`V_H`).
    pub right: CMatrix,
}

impl SvdReduction {
    pub fn reconstruct(&self) -> CMatrix {
        let mut scaled = self.left.clone();
        for (j, g) in self.gains.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*g);
        }
        scaled * self.right.adjoint()
    }
}

/// Thin SVD of the channel with singular values sorted non-increasing.
pub fn svd_reduce(channel: &PhysicalChannel) -> Result<SvdReduction> {
    let h = channel.entries();
    let svd = h.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return Vᴴ".into()))?;
    let n = svd.singular_values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let gains = order.iter().map(|&k| svd.singular_values[k]).collect();
    let left = CMatrix::from_fn(h.nrows(), n, |i, j| u[(i, order[j])]);
    let right = CMatrix::from_fn(h.ncols(), n, |i, j| v_t[(order[j], i)].conj());
    Ok(SvdReduction { gains, left, right })
}

/// Rescales gains so that `Σ gains² = n_t`.
pub fn normalize(gains: &[f64], n_t: usize) -> Result<Vec<f64>> {
    if gains.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gains"));
    }
    let energy: f64 = gains.iter().map(|g| g * g).sum();
    if energy <= 0.0 {
        return Err(Error::ZeroGains);
    }
    let scale = (n_t as f64 / energy).sqrt();
    Ok(gains.iter().map(|g| g * scale).collect())
}

/// Parallel channel `Σ_H` plus the noise variance `σ²` of the circularly
/// symmetric complex Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannel {
    gains: Vec<f64>,
    noise_variance: f64,
}

impl EquivalentChannel {
    pub fn new(gains: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if gains.is_empty() {
            return Err(invalid("gains", "at least one gain required"));
        }
        if gains.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gains"));
        }
        if gains.iter().any(|&g| g < 0.0) {
            return Err(invalid("gains", "gains must be non-negative"));
        }
        if gains.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("gains", "gains must be sorted non-increasing"));
        }
        if !noise_variance.is_finite() || noise_variance <= 0.0 {
            return Err(invalid(
                "noise_variance",
                format!("must be positive and finite, got {noise_variance}"),
            ));
        }
        Ok(Self {
            gains,
            noise_variance,
        })
    }

    /// SVD-reduces `channel`, optionally normalizing so that `Σ gains² = N_t`.
    pub fn from_physical(
        channel: &PhysicalChannel,
        noise_variance: f64,
        normalize_gains: bool,
    ) -> Result<Self> {
        let reduction = svd_reduce(channel)?;
        let gains = if normalize_gains {
            normalize(&reduction.gains, channel.n_t())?
        } else {
            reduction.gains
        };
        Self::new(gains, noise_variance)
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Number of parallel streams.
    pub fn dim(&self) -> usize {
        self.gains.len()
    }

    pub fn with_noise_variance(&self, noise_variance: f64) -> Result<Self> {
        Self::new(self.gains.clone(), noise_variance)
    }
}

/// Power allocation `Σ_G`, rotation `Φ` and total budget `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderState {
    power_diag: Vec<f64>,
    rotation: CMatrix,
    budget: f64,
}

impl PrecoderState {
    pub fn new(power_diag: Vec<f64>, rotation: CMatrix, budget: f64) -> Result<Self> {
        let n = power_diag.len();
        if n == 0 {
            return Err(invalid("power_diag", "empty"));
        }
        if rotation.nrows() != n || rotation.ncols() != n {
            return Err(Error::Dimension {
                what: "rotation",
                expected: n,
                got: rotation.nrows(),
            });
        }
        if power_diag.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("power_diag"));
        }
        if power_diag.iter().any(|&p| p < 0.0) {
            return Err(invalid("power_diag", "entries must be non-negative"));
        }
        if !budget.is_finite() || budget <= 0.0 {
            return Err(invalid("budget", format!("must be positive, got {budget}")));
        }
        let total: f64 = power_diag.iter().map(|p| p * p).sum();
        if (total - budget).abs() > BUDGET_TOL * budget {
            return Err(invalid(
                "power_diag",
                format!("Σ power² = {total} differs from budget {budget}"),
            ));
        }
        let defect = unitarity_defect(&rotation);
        if !(defect <= UNITARY_TOL) {
            return Err(invalid(
                "rotation",
                format!("not unitary (‖ΦΦᴴ − I‖ = {defect:e})"),
            ));
        }
        Ok(Self {
            power_diag,
            rotation,
            budget,
        })
    }

    /// State whose budget is whatever `Σ power²` happens to be. Used for
    /// perturbation studies that leave the trace sphere.
    pub fn from_parts(power_diag: Vec<f64>, rotation: CMatrix) -> Result<Self> {
        let budget = power_diag.iter().map(|p| p * p).sum();
        Self::new(power_diag, rotation, budget)
    }

    /// Equal power `√(P/n)` on every stream and `Φ = I`.
    pub fn initial(n: usize, budget: f64) -> Result<Self> {
        let p = (budget / n as f64).sqrt();
        Self::new(vec![p; n], identity(n), budget)
    }

    pub fn power_diag(&self) -> &[f64] {
        &self.power_diag
    }

    pub fn rotation(&self) -> &CMatrix {
        &self.rotation
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn dim(&self) -> usize {
        self.power_diag.len()
    }

    pub fn with_power(&self, power_diag: Vec<f64>) -> Result<Self> {
        Self::new(power_diag, self.rotation.clone(), self.budget)
    }

    pub fn with_rotation(&self, rotation: CMatrix) -> Result<Self> {
        Self::new(self.power_diag.clone(), rotation, self.budget)
    }

    /// Share of the budget on the first (strongest) stream.
    pub fn power_fraction_strong(&self) -> f64 {
        self.power_diag[0] * self.power_diag[0] / self.budget
    }
}

/// Square M-QAM alphabet with in-phase and quadrature levels
/// `{±1, ±3, …, ±(√M−1)}`, in-phase ascending outer, quadrature ascending inner.
pub fn qam_alphabet(order: usize) -> Result<Vec<Complex64>> {
    let side = qam_side(order)?;
    let levels: Vec<f64> = (0..side)
        .map(|k| 2.0 * k as f64 - (side as f64 - 1.0))
        .collect();
    Ok(levels
        .iter()
        .flat_map(|&re| levels.iter().map(move |&im| Complex64::new(re, im)))
        .collect())
}

/// `√M` for a supported square QAM order.
pub fn qam_side(order: usize) -> Result<usize> {
    match order {
        4 => Ok(2),
        16 => Ok(4),
        64 => Ok(8),
        256 => Ok(16),
        _ => Err(Error::UnsupportedModulation(order)),
    }
}

/// Per-antenna QAM alphabet with Maxwell–Boltzmann probabilities
/// `p_i ∝ exp(λ‖x_i‖²)` and the scaling `Δ` that gives unit mean power.
///
/// Built through the constructors in [`crate::shaping`].
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaShaping {
    pub(crate) order: usize,
    pub(crate) alphabet: Vec<Complex64>,
    pub(crate) lambda: f64,
    pub(crate) delta: f64,
    pub(crate) probs: Vec<f64>,
}

impl AntennaShaping {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alphabet(&self) -> &[Complex64] {
        &self.alphabet
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `Δ²·Σ p_i‖x_i‖²`, one for a valid shaping.
    pub fn mean_power(&self) -> f64 {
        self.delta
            * self.delta
            * self
                .alphabet
                .iter()
                .zip(&self.probs)
                .map(|(x, p)| p * x.norm_sqr())
                .sum::<f64>()
    }
}

/// Enumerated product constellation of scaled symbol vectors `Δx`.
///
/// Vectors are stored row-major: vector `k` occupies
/// `vectors[k*dim .. (k+1)*dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointConstellation {
    dim: usize,
    vectors: Vec<Complex64>,
    probs: Vec<f64>,
    /// Per-antenna symbols and probabilities when the set is a Cartesian
    /// product in [`build_joint`] order.
    factors: Option<Vec<AntennaFactor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AntennaFactor {
    pub symbols: Vec<Complex64>,
    pub probs: Vec<f64>,
}

impl JointConstellation {
    /// Arbitrary finite constellation; only the probabilities are checked.
    pub fn new(dim: usize, vectors: Vec<Complex64>, probs: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if vectors.len() != dim * probs.len() || probs.is_empty() {
            return Err(Error::Dimension {
                what: "constellation vectors",
                expected: dim * probs.len(),
                got: vectors.len(),
            });
        }
        if vectors.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("constellation vectors"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(invalid("probs", "probabilities must be finite and >= 0"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(invalid("probs", format!("sum to {total}, expected 1")));
        }
        Ok(Self {
            dim,
            vectors,
            probs,
            factors: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn factors(&self) -> Option<&[AntennaFactor]> {
        self.factors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn vector(&self, k: usize) -> &[Complex64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Empirical `E[Δx(Δx)ᴴ]` over the enumerated set.
    pub fn covariance(&self) -> CMatrix {
        let n = self.dim;
        let mut cov = CMatrix::zeros(n, n);
        for (k, p) in self.probs.iter().enumerate() {
            let v = self.vector(k);
            for i in 0..n {
                for j in 0..n {
                    cov[(i, j)] += v[i] * v[j].conj() * *p;
                }
            }
        }
        cov
    }
}

/// Cartesian product of per-antenna shapings. Antenna 1 varies slowest; within
/// an antenna the alphabet keeps its natural order.
pub fn build_joint(shapings: &[AntennaShaping]) -> Result<JointConstellation> {
    if shapings.is_empty() {
        return Err(invalid("shapings", "at least one antenna required"));
    }
    let dim = shapings.len();
    let count: usize = shapings.iter().map(|s| s.alphabet.len()).product();
    let mut vectors = Vec::with_capacity(count * dim);
    let mut probs = Vec::with_capacity(count);
    let mut index = vec![0usize; dim];
    for _ in 0..count {
        let mut p = 1.0;
        for (j, s) in shapings.iter().enumerate() {
            vectors.push(s.alphabet[index[j]] * s.delta);
            p *= s.probs[index[j]];
        }
        probs.push(p);
        // odometer, last antenna fastest
        for j in (0..dim).rev() {
            index[j] += 1;
            if index[j] < shapings[j].alphabet.len() {
                break;
            }
            index[j] = 0;
        }
    }
    let mut joint = JointConstellation::new(dim, vectors, probs)?;
    joint.factors = Some(
        shapings
            .iter()
            .map(|s| AntennaFactor {
                symbols: s.alphabet.iter().map(|x| x * s.delta).collect(),
                probs: s.probs.clone(),
            })
            .collect(),
    );
    Ok(joint)
}

/// `diag(gains)·diag(power)·Φ·symbol + noise` for one scaled symbol vector.
pub fn synthesize_output(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    symbol: &[Complex64],
    noise: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n = eq.dim();
    for (what, got) in [
        ("precoder", prec.dim()),
        ("symbol vector", symbol.len()),
        ("noise vector", noise.len()),
    ] {
        if got != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                got,
            });
        }
    }
    let phi = prec.rotation();
    Ok((0..n)
        .map(|k| {
            let rotated: Complex64 = (0..n).map(|l| phi[(k, l)] * symbol[l]).sum();
            rotated * (eq.gains()[k] * prec.power_diag()[k]) + noise[k]
        })
        .collect())
}
