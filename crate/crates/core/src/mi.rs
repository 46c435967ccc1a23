//! Mutual information `I(x; ȳ)` of the parallel model and its gradients.
//!
//! With `s_p = Σ_H·Σ_G·Φ·Δx_p` the noiseless received points and `v_s` the
//! noise draws, the estimator is
//!
//! ```text
//! I = −(1/S) Σ_s Σ_i p_i · log2 Σ_p p_p · exp(−a_ip(v_s))
//! a_ip(v) = (‖s_i − s_p + v‖² − ‖v‖²) / σ²
//! ```
//!
//! The inner sum is evaluated as a log-sum-exp. Noise draws come from a
//! counter-based stream keyed by `(seed, sample index)`, so two evaluations
//! with the same [`McConfig`] use identical noise (common random numbers) and
//! the result does not depend on how samples are split across threads.

use std::f64::consts::{LN_2, PI};
use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::hermite::GaussHermite;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::CMatrix;
use crate::model::{
    AntennaFactor, AntennaShaping, EquivalentChannel, JointConstellation, PrecoderState,
};
use crate::rng::{GaussianStream, DOMAIN_NOISE};

/// Terms more than this many nats below the largest exponent are dropped
/// from the inner sum; `e^−40` is below double precision relative to 1.
const PRUNE_NATS: f64 = 40.0;

/// Default Gauss–Hermite order per axis for [`mi_oracle_1d`].
pub const ORACLE_NODES: usize = 96;

/// Monte-Carlo settings for every expectation over the noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub sample_count: usize,
    pub seed: u64,
}

impl McConfig {
    /// Sample count used inside optimization loops.
    pub const OPTIMIZATION_SAMPLES: usize = 1000;
    /// Sample count used for reported curve points.
    pub const REPORT_SAMPLES: usize = 10_000;

    pub fn new(sample_count: usize, seed: u64) -> Result<Self> {
        if sample_count == 0 {
            return Err(invalid("sample_count", "must be at least 1"));
        }
        Ok(Self { sample_count, seed })
    }
}

/// Mutual information in bits per channel use with its Monte-Carlo standard
/// error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiValue {
    pub bits: f64,
    pub std_error: f64,
}

#[inline(always)]
fn exp_pruned(x: f64) -> f64 {
    exp_above(x, -PRUNE_NATS)
}

/// `exp(x)` for `floor ≤ x ≤ 0`, returning exactly zero at or below `floor`
/// (which must be above −708).
///
/// Branch-free so the weight loops vectorize; accurate to a few ulp over
/// the kept range. Uses only IEEE add/mul, so results are identical on every
/// target.
#[inline(always)]
fn exp_above(x: f64, floor: f64) -> f64 {
    const LOG2_E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5·2^52 rounds to the nearest integer in the low mantissa bits
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let keep = x > floor;
    let xc = if keep { x } else { floor };
    let t = xc * LOG2_E + SHIFTER;
    let k = t - SHIFTER;
    let ki = t.to_bits() as i64 - SHIFTER.to_bits() as i64;
    let r = (xc - k * LN2_HI) - k * LN2_LO;
    // Taylor to degree 13 on |r| ≤ ln2/2; truncation error below 1e-17
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits(((ki + 1023) as u64) << 52);
    if keep {
        p * scale
    } else {
        0.0
    }
}

// Fixed-width lane reductions: a deterministic summation order with enough
// independent accumulators to hide add latency.

const LANES: usize = 16;

#[inline]
fn fold_lanes(acc: &[f64; LANES]) -> f64 {
    let mut width = LANES;
    let mut acc = *acc;
    while width > 1 {
        width /= 2;
        for j in 0..width {
            acc[j] += acc[j + width];
        }
    }
    acc[0]
}

#[inline]
fn lane_sum(a: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let chunks = a.chunks_exact(LANES);
    let rest = chunks.remainder();
    for c in chunks {
        for j in 0..LANES {
            acc[j] += c[j];
        }
    }
    let mut s = fold_lanes(&acc);
    for x in rest {
        s += x;
    }
    s
}

#[inline]
fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..LANES {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = fold_lanes(&acc);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn lane_max(a: &[f64]) -> f64 {
    let mut acc = [f64::NEG_INFINITY; LANES];
    let chunks = a.chunks_exact(LANES);
    let rest = chunks.remainder();
    for c in chunks {
        for j in 0..LANES {
            acc[j] = if c[j] > acc[j] { c[j] } else { acc[j] };
        }
    }
    let mut m = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for &x in rest {
        m = m.max(x);
    }
    m
}

/// Precomputed received constellation for one `(channel, precoder, joint)`.
struct Received<'a> {
    dim: usize,
    count: usize,
    /// `s_p` as planes of length `count`: plane `2d` holds real parts and
    /// plane `2d + 1` imaginary parts of dimension `d`.
    planes: Vec<f64>,
    /// Features whose weighted sums the gradients need, one plane each: the
    /// real and imaginary parts of `Δx_p` per dimension, then the entries
    /// `(a, c)`, `a ≤ c`, of `Δx_p·Δx_pᴴ` in row order (real part, then the
    /// imaginary part when `a < c`).
    features: Vec<f64>,
    feature_count: usize,
    symbols: Vec<Complex64>,
    points: Vec<Complex64>,
    log_probs: Vec<f64>,
    probs: &'a [f64],
    inv_noise: f64,
    noise_variance: f64,
    factored: Option<Factored>,
}

/// Product-constellation form of the weights.
///
/// With `B = Σ_H·Σ_G·Φ` and `G = BᴴB`, the log-weight of `Δx_p = (a_1[q_1], …)`
/// splits as `−‖y‖²/σ² + Σ_k t_k[q_k] + c_p`, where
/// `t_k[q] = ln P_k(q) − G_kk|a|²/σ² + 2·Re(conj(u_k)·a)`, `u = Bᴴy/σ²`, and the
/// off-diagonal part `c_p` does not depend on `y`. Per received point only the
/// per-antenna factors need exponentials, and every weighted sum
/// `Σ_p e^{c_p}·Π_k e^{t_k[q_k]}·f_p` is a contraction of a fixed table with
/// those factors, one antenna at a time.
struct Factored {
    count: usize,
    symbols: Vec<Vec<Complex64>>,
    /// `ln P_k(q) − G_kk|a|²/σ²`.
    base: Vec<Vec<f64>>,
    /// `Bᴴ/σ²`, row-major.
    back: Vec<Complex64>,
    cross_max: f64,
    /// `e^{c_p − max c}` followed by `e^{c_p − max c}·f_p` for every feature
    /// plane, each laid out with the last antenna slowest.
    tables: Vec<f64>,
    /// Factors at or below `e^floor` are dropped; with `n + 1` factors every
    /// kept product stays a normal double.
    floor: f64,
    /// Largest tolerated gap between the factor-wise and joint maxima; beyond
    /// it a dropped factor could belong to a significant term.
    max_gap: f64,
    log_count: f64,
}

impl Factored {
    fn new(
        factors: &[AntennaFactor],
        amp: &[f64],
        phi: &CMatrix,
        joint: &JointConstellation,
        features: &[f64],
        inv_noise: f64,
    ) -> Option<Self> {
        let n = amp.len();
        let count = joint.len();
        let floor = -700.0 / (n as f64 + 1.0);
        let max_gap = -floor - PRUNE_NATS;
        if max_gap <= 0.0 {
            return None;
        }
        let sizes: Vec<usize> = factors.iter().map(|f| f.symbols.len()).collect();
        let b = |k: usize, l: usize| phi[(k, l)] * amp[k];
        let gram: Vec<Complex64> = (0..n * n)
            .map(|j| (0..n).map(|k| b(k, j / n).conj() * b(k, j % n)).sum())
            .collect();
        let symbols: Vec<Vec<Complex64>> = factors.iter().map(|f| f.symbols.clone()).collect();
        let base = factors
            .iter()
            .enumerate()
            .map(|(k, f)| {
                f.symbols
                    .iter()
                    .zip(&f.probs)
                    .map(|(a, p)| p.ln() - gram[k * n + k].re * a.norm_sqr() * inv_noise)
                    .collect()
            })
            .collect();
        let back = (0..n * n)
            .map(|j| b(j % n, j / n).conj() * inv_noise)
            .collect();
        let raw: Vec<f64> = (0..count)
            .map(|p| {
                let z = joint.vector(p);
                let mut c = 0.0;
                for a in 0..n {
                    for d in a + 1..n {
                        c += (z[a].conj() * gram[a * n + d] * z[d]).re;
                    }
                }
                -2.0 * c * inv_noise
            })
            .collect();
        let cross_max = lane_max(&raw);
        let cross: Vec<f64> = raw.iter().map(|c| exp_above(c - cross_max, floor)).collect();

        // joint index (first antenna slowest) → table index (last antenna slowest)
        let mut order = vec![0usize; count];
        let mut digits = vec![0usize; n];
        for slot in order.iter_mut() {
            let mut r = 0;
            let mut stride = 1;
            for k in 0..n {
                r += digits[k] * stride;
                stride *= sizes[k];
            }
            *slot = r;
            for k in (0..n).rev() {
                digits[k] += 1;
                if digits[k] < sizes[k] {
                    break;
                }
                digits[k] = 0;
            }
        }
        let planes = 1 + features.len() / count;
        let mut tables = vec![0.0; planes * count];
        for (p, &r) in order.iter().enumerate() {
            tables[r] = cross[p];
            for j in 1..planes {
                tables[j * count + r] = cross[p] * features[(j - 1) * count + p];
            }
        }
        Some(Self {
            count,
            symbols,
            base,
            back,
            cross_max,
            tables,
            floor,
            max_gap,
            log_count: (count as f64).ln(),
        })
    }

    /// Fills the per-antenna factors for received point `y` and returns the
    /// log-scale they are relative to.
    fn factors(&self, y: &[Complex64], inv_noise: f64, exps: &mut [Vec<f64>]) -> f64 {
        let n = y.len();
        let mut shift = self.cross_max - y.iter().map(|z| z.norm_sqr()).sum::<f64>() * inv_noise;
        for (k, e) in exps.iter_mut().enumerate() {
            let u: Complex64 = (0..n).map(|l| self.back[k * n + l] * y[l]).sum();
            e.clear();
            e.extend(
                self.symbols[k]
                    .iter()
                    .zip(&self.base[k])
                    .map(|(a, b)| b + 2.0 * (u.re * a.re + u.im * a.im)),
            );
            let m = lane_max(e);
            shift += m;
            for x in e.iter_mut() {
                *x = exp_above(*x - m, self.floor);
            }
        }
        shift
    }

    fn table(&self, j: usize) -> &[f64] {
        &self.tables[j * self.count..(j + 1) * self.count]
    }
}

/// `Σ_r x[r]·Π_k e_k[q_k(r)]` for `x` laid out with the last antenna slowest,
/// contracting the slowest axis first.
fn contract(x: &[f64], exps: &[Vec<f64>], cur: &mut Vec<f64>, next: &mut Vec<f64>) -> f64 {
    let last = exps.len() - 1;
    fold_axis(x, &exps[last], cur);
    for e in exps[..last].iter().rev() {
        fold_axis(cur, e, next);
        std::mem::swap(cur, next);
    }
    cur[0]
}

/// `w[p] −= |y − s_p|²/σ²` for one dimension.
#[inline]
fn subtract_distance(w: &mut [f64], re: &[f64], im: &[f64], y: Complex64, inv_noise: f64) {
    for ((b, sr), si) in w.iter_mut().zip(re).zip(im) {
        let dr = y.re - sr;
        let di = y.im - si;
        *b -= (dr * dr + di * di) * inv_noise;
    }
}

#[inline]
fn fold_axis(src: &[f64], e: &[f64], out: &mut Vec<f64>) {
    let rest = src.len() / e.len();
    out.clear();
    out.resize(rest, 0.0);
    // register-resident blocks; each output still sums rows in order
    let blocks = rest / LANES;
    for blk in 0..blocks {
        let mut acc = [0.0; LANES];
        for (b, &eb) in e.iter().enumerate() {
            let row = &src[b * rest + blk * LANES..b * rest + (blk + 1) * LANES];
            for j in 0..LANES {
                acc[j] += row[j] * eb;
            }
        }
        out[blk * LANES..(blk + 1) * LANES].copy_from_slice(&acc);
    }
    let done = blocks * LANES;
    if done < rest {
        for (b, &eb) in e.iter().enumerate() {
            let row = &src[b * rest + done..(b + 1) * rest];
            for (o, s) in out[done..].iter_mut().zip(row) {
                *o += s * eb;
            }
        }
    }
}

impl<'a> Received<'a> {
    fn new(
        eq: &EquivalentChannel,
        prec: &PrecoderState,
        joint: &'a JointConstellation,
    ) -> Result<Self> {
        let dim = eq.dim();
        for (what, got) in [("precoder", prec.dim()), ("constellation", joint.dim())] {
            if got != dim {
                return Err(Error::Dimension {
                    what,
                    expected: dim,
                    got,
                });
            }
        }
        let count = joint.len();
        let phi = prec.rotation();
        let amp = amplitudes(eq, prec);
        let mut points = Vec::with_capacity(count * dim);
        for p in 0..count {
            let z = joint.vector(p);
            for k in 0..dim {
                let rotated: Complex64 = (0..dim).map(|l| phi[(k, l)] * z[l]).sum();
                points.push(rotated * amp[k]);
            }
        }
        let mut planes = vec![0.0; 2 * dim * count];
        for p in 0..count {
            for d in 0..dim {
                planes[2 * d * count + p] = points[p * dim + d].re;
                planes[(2 * d + 1) * count + p] = points[p * dim + d].im;
            }
        }
        let mut features = Vec::with_capacity((2 * dim + dim * dim) * count);
        for d in 0..dim {
            features.extend((0..count).map(|p| joint.vector(p)[d].re));
            features.extend((0..count).map(|p| joint.vector(p)[d].im));
        }
        for a in 0..dim {
            for c in a..dim {
                let entry = |p: usize| joint.vector(p)[a] * joint.vector(p)[c].conj();
                features.extend((0..count).map(|p| entry(p).re));
                if a < c {
                    features.extend((0..count).map(|p| entry(p).im));
                }
            }
        }
        let symbols = (0..count).flat_map(|p| joint.vector(p).iter().copied()).collect();
        let log_probs = joint.probs().iter().map(|p| p.ln()).collect();
        let inv_noise = eq.noise_variance().recip();
        let factored = joint
            .factors()
            .and_then(|f| Factored::new(f, &amp, phi, joint, &features, inv_noise));
        Ok(Self {
            dim,
            count,
            planes,
            feature_count: 2 * dim + dim * dim,
            features,
            symbols,
            points,
            log_probs,
            probs: joint.probs(),
            inv_noise,
            noise_variance: eq.noise_variance(),
            factored,
        })
    }

    fn point(&self, p: usize) -> &[Complex64] {
        &self.points[p * self.dim..(p + 1) * self.dim]
    }

    fn plane<'b>(&self, planes: &'b [f64], j: usize) -> &'b [f64] {
        &planes[j * self.count..(j + 1) * self.count]
    }

    /// For `y`, weights `w_p = exp(e_p − shift)` with
    /// `e_p = ln p_p − ‖y − s_p‖²/σ²` (terms far below the largest dropped).
    /// Returns `(shift, Σ w)` and, when `sums` is non-empty, fills it with
    /// `Σ_p w_p·f_p` for every feature plane.
    fn weighted_sums(&self, y: &[Complex64], scratch: &mut Scratch, sums: &mut [f64]) -> (f64, f64) {
        if let Some(f) = &self.factored {
            let shift = f.factors(y, self.inv_noise, &mut scratch.exps);
            let total = contract(f.table(0), &scratch.exps, &mut scratch.cur, &mut scratch.next);
            // every term is at most the joint maximum, so Σ w ≤ count·e^−gap
            if total > 0.0 && total.ln() >= f.log_count - f.max_gap {
                for (j, out) in sums.iter_mut().enumerate() {
                    *out = contract(f.table(j + 1), &scratch.exps, &mut scratch.cur, &mut scratch.next);
                }
                return (shift, total);
            }
        }
        self.direct_sums(y, scratch, sums)
    }

    /// Weighted sums from the log-weights of every point. When few terms
    /// survive pruning (high SNR) only those are exponentiated.
    fn direct_sums(&self, y: &[Complex64], scratch: &mut Scratch, sums: &mut [f64]) -> (f64, f64) {
        let w = &mut scratch.w;
        w.copy_from_slice(&self.log_probs);
        for d in 0..self.dim {
            subtract_distance(
                w,
                self.plane(&self.planes, 2 * d),
                self.plane(&self.planes, 2 * d + 1),
                y[d],
                self.inv_noise,
            );
        }
        let max = lane_max(w);
        let threshold = max - PRUNE_NATS;
        let kept = &mut scratch.kept;
        kept.resize(self.count, 0);
        let mut len = 0;
        for (p, &b) in w.iter().enumerate() {
            kept[len] = p;
            len += (b > threshold) as usize;
        }
        let kept = &kept[..len];
        if len * 4 <= self.count {
            let mut total = 0.0;
            for &p in kept.iter() {
                w[p] = exp_pruned(w[p] - max);
                total += w[p];
            }
            for (j, out) in sums.iter_mut().enumerate() {
                let feature = self.plane(&self.features, j);
                *out = kept.iter().map(|&p| w[p] * feature[p]).sum();
            }
            return (max, total);
        }
        for b in w.iter_mut() {
            *b = exp_pruned(*b - max);
        }
        for (j, out) in sums.iter_mut().enumerate() {
            *out = lane_dot(w, self.plane(&self.features, j));
        }
        (max, lane_sum(w))
    }

    fn noise_energy(&self, noise: &[Complex64]) -> f64 {
        noise.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.inv_noise
    }

    /// Per-sample MI contribution `−Σ_i p_i log2 Σ_p p_p e^{−a_ip}`.
    fn sample_mi(&self, noise: &[Complex64], scratch: &mut Scratch) -> f64 {
        let noise_energy = self.noise_energy(noise);
        let mut acc = 0.0;
        for i in 0..self.count {
            let pi = self.probs[i];
            if pi == 0.0 {
                continue;
            }
            let mut y = std::mem::take(&mut scratch.y);
            for ((yk, sk), vk) in y.iter_mut().zip(self.point(i)).zip(noise) {
                *yk = sk + vk;
            }
            let (shift, total) = self.weighted_sums(&y, scratch, &mut []);
            scratch.y = y;
            acc -= pi * (shift + total.ln() + noise_energy);
        }
        acc / LN_2
    }

    /// Per-sample moments `v·mᴴ` and `M` with
    /// `m = Σ_i p_i Σ_p w_ip (Δx_i − Δx_p)` and
    /// `M = Σ_i p_i Σ_p w_ip (Δx_i − Δx_p)(Δx_i − Δx_p)ᴴ`, where `w_ip` are
    /// the normalized posterior weights. Both gradients are linear in them.
    ///
    /// The inner sums expand into weighted moments of the fixed symbol set,
    /// `Σ w`, `Σ w·Δx_p` and `Σ w·Δx_p·Δx_pᴴ`.
    fn sample_moments(&self, noise: &[Complex64], scratch: &mut Scratch) -> Moments {
        let n = self.dim;
        let mut m = vec![Complex64::new(0.0, 0.0); n];
        let mut big = vec![Complex64::new(0.0, 0.0); n * n];
        let mut sums = vec![0.0; self.feature_count];
        let mut first = vec![Complex64::new(0.0, 0.0); n];
        let mut second = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..self.count {
            let pi = self.probs[i];
            if pi == 0.0 {
                continue;
            }
            let mut y = std::mem::take(&mut scratch.y);
            for ((yk, sk), vk) in y.iter_mut().zip(self.point(i)).zip(noise) {
                *yk = sk + vk;
            }
            let (_, total) = self.weighted_sums(&y, scratch, &mut sums);
            scratch.y = y;
            for k in 0..n {
                first[k] = Complex64::new(sums[2 * k], sums[2 * k + 1]);
            }
            let mut j = 2 * n;
            for a in 0..n {
                for c in a..n {
                    let re = sums[j];
                    j += 1;
                    let im = if c == a {
                        0.0
                    } else {
                        j += 1;
                        sums[j - 1]
                    };
                    second[a * n + c] = Complex64::new(re, im);
                    second[c * n + a] = Complex64::new(re, -im);
                }
            }
            let zi = &self.symbols[i * n..(i + 1) * n];
            let scale = pi / total;
            for a in 0..n {
                m[a] += (zi[a] * total - first[a]) * scale;
                for c in 0..n {
                    let v = zi[a] * zi[c].conj() * total - zi[a] * first[c].conj()
                        - first[a] * zi[c].conj()
                        + second[a * n + c];
                    big[a * n + c] += v * scale;
                }
            }
        }
        let mut noise_m = vec![Complex64::new(0.0, 0.0); n * n];
        for k in 0..n {
            for l in 0..n {
                noise_m[k * n + l] = noise[k] * m[l].conj();
            }
        }
        Moments {
            noise_m,
            second: big,
        }
    }
}

fn amplitudes(eq: &EquivalentChannel, prec: &PrecoderState) -> Vec<f64> {
    eq.gains()
        .iter()
        .zip(prec.power_diag())
        .map(|(h, g)| h * g)
        .collect()
}

/// Per-thread buffers.
struct Scratch {
    w: Vec<f64>,
    y: Vec<Complex64>,
    noise: Vec<Complex64>,
    kept: Vec<usize>,
    exps: Vec<Vec<f64>>,
    cur: Vec<f64>,
    next: Vec<f64>,
}

impl Scratch {
    fn new(rx: &Received<'_>) -> Self {
        Self {
            w: vec![0.0; rx.count],
            y: vec![Complex64::new(0.0, 0.0); rx.dim],
            noise: Vec::with_capacity(rx.dim),
            kept: Vec::with_capacity(rx.count),
            exps: vec![Vec::new(); rx.dim],
            cur: Vec::with_capacity(rx.count),
            next: Vec::with_capacity(rx.count),
        }
    }
}

struct Moments {
    noise_m: Vec<Complex64>,
    second: Vec<Complex64>,
}

fn noise_draws(mc: &McConfig) -> GaussianStream {
    GaussianStream::new(mc.seed, DOMAIN_NOISE)
}

/// Monte-Carlo estimate of `I(x; ȳ)`.
pub fn estimate_mi(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    joint: &JointConstellation,
    mc: &McConfig,
) -> Result<MiValue> {
    let rx = Received::new(eq, prec, joint)?;
    let stream = noise_draws(mc);
    let contributions: Vec<f64> = (0..mc.sample_count)
        .into_par_iter()
        .map_init(
            || Scratch::new(&rx),
            |scratch, s| {
                let mut noise = std::mem::take(&mut scratch.noise);
                stream.fill_complex(s as u64, rx.noise_variance, &mut noise, rx.dim);
                let v = rx.sample_mi(&noise, scratch);
                scratch.noise = noise;
                v
            },
        )
        .collect();
    Ok(summarize(&contributions))
}

/// Mean and standard error, summed in sample-index order.
fn summarize(values: &[f64]) -> MiValue {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    // rounding can leave a hair below zero when nothing is transmitted
    MiValue {
        bits: mean.max(0.0),
        std_error,
    }
}

/// Both gradients of the same-seed estimator from one pass over the noise.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// `∂I/∂g_k` for each power amplitude, see [`grad_power`].
    pub power: Vec<f64>,
    /// `∂I/∂Φ*`, see [`grad_rotation`].
    pub rotation: CMatrix,
}

/// Computes [`grad_power`] and [`grad_rotation`] together.
pub fn gradients(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    joint: &JointConstellation,
    mc: &McConfig,
) -> Result<Gradients> {
    let rx = Received::new(eq, prec, joint)?;
    let n = rx.dim;
    let stream = noise_draws(mc);
    let per_sample: Vec<Moments> = (0..mc.sample_count)
        .into_par_iter()
        .map_init(
            || Scratch::new(&rx),
            |scratch, s| {
                let mut noise = std::mem::take(&mut scratch.noise);
                stream.fill_complex(s as u64, rx.noise_variance, &mut noise, n);
                let m = rx.sample_moments(&noise, scratch);
                scratch.noise = noise;
                m
            },
        )
        .collect();

    let mut noise_m = CMatrix::zeros(n, n);
    let mut second = CMatrix::zeros(n, n);
    for m in &per_sample {
        for k in 0..n {
            for l in 0..n {
                noise_m[(k, l)] += m.noise_m[k * n + l];
                second[(k, l)] += m.second[k * n + l];
            }
        }
    }
    let norm = rx.inv_noise / (mc.sample_count as f64 * LN_2);
    let phi = prec.rotation();
    let amp = amplitudes(eq, prec);
    let amp_diag = CMatrix::from_fn(n, n, |k, l| {
        Complex64::new(if k == l { amp[k] } else { 0.0 }, 0.0)
    });
    // Σ_p w (y − s_p)(Δx_i − Δx_p)ᴴ = v·mᴴ + Σ_H Σ_G Φ·M
    let inner = &noise_m + &amp_diag * phi * &second;
    let rotation = (&amp_diag * &inner).map(|z| z * norm);
    let along = &inner * phi.adjoint();
    let power = (0..n)
        .map(|k| 2.0 * norm * eq.gains()[k] * along[(k, k)].re)
        .collect();
    Ok(Gradients { power, rotation })
}

/// Derivative of the estimate with respect to each power amplitude `Σ_G[k,k]`.
///
/// This is the real derivative `∂I/∂g_k` of the same-seed estimator (twice the
/// real part of the Wirtinger derivative), in bits per amplitude unit, and it
/// keeps the noise term of the chain rule.
pub fn grad_power(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    joint: &JointConstellation,
    mc: &McConfig,
) -> Result<Vec<f64>> {
    gradients(eq, prec, joint, mc).map(|g| g.power)
}

/// Wirtinger gradient `Γ = ∂I/∂Φ*` of the same-seed estimator.
///
/// For a perturbation `dΦ` the estimate changes by `2·Re trace(Γᴴ·dΦ)`.
pub fn grad_rotation(
    eq: &EquivalentChannel,
    prec: &PrecoderState,
    joint: &JointConstellation,
    mc: &McConfig,
) -> Result<CMatrix> {
    gradients(eq, prec, joint, mc).map(|g| g.rotation)
}

/// Deterministic mutual information of a scalar channel by tensorized
/// Gauss–Hermite quadrature over the complex noise plane.
#[derive(Debug, Clone)]
pub struct ScalarOracle {
    /// `(t_j + i·t_k, w_j·w_k/π)` with negligible weights dropped.
    grid: Vec<(Complex64, f64)>,
}

impl ScalarOracle {
    pub fn new(nodes: usize) -> Result<Self> {
        let nodes = NonZeroUsize::new(nodes).ok_or_else(|| invalid("nodes", "must be positive"))?;
        let rule = GaussHermite::new(nodes);
        let pairs = rule.as_node_weight_pairs();
        let mut grid = Vec::with_capacity(pairs.len() * pairs.len());
        for &(tr, wr) in pairs {
            for &(ti, wi) in pairs {
                let w = wr * wi / PI;
                if w > 1e-30 {
                    grid.push((Complex64::new(tr, ti), w));
                }
            }
        }
        Ok(Self { grid })
    }

    /// Shared instance with [`ORACLE_NODES`] nodes per axis.
    pub fn shared() -> &'static ScalarOracle {
        static ORACLE: OnceLock<ScalarOracle> = OnceLock::new();
        ORACLE.get_or_init(|| ScalarOracle::new(ORACLE_NODES).expect("positive node count"))
    }

    /// MI of `y = √snr·Δx + z`, `z ~ CN(0, 1)`.
    pub fn mi_at_snr(&self, snr: f64, shaping: &AntennaShaping) -> Result<f64> {
        if !(snr >= 0.0) || !snr.is_finite() {
            return Err(invalid("snr", format!("must be finite and >= 0, got {snr}")));
        }
        let amp = snr.sqrt() * shaping.delta();
        let points: Vec<Complex64> = shaping.alphabet().iter().map(|x| x * amp).collect();
        let probs = shaping.probs();
        let log_probs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let m = points.len();
        let mut buf = vec![0.0; m];
        let mut total = 0.0;
        for i in 0..m {
            if probs[i] == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for &(z, w) in &self.grid {
                let y = points[i] + z;
                let mut max = f64::NEG_INFINITY;
                for (b, (s, lp)) in buf.iter_mut().zip(points.iter().zip(&log_probs)) {
                    *b = lp - (y - s).norm_sqr();
                    max = max.max(*b);
                }
                let sum: f64 = buf.iter().map(|b| (b - max).exp()).sum();
                inner += w * (max + sum.ln() + z.norm_sqr());
            }
            total -= probs[i] * inner;
        }
        Ok(total / LN_2)
    }

    /// Minimum mean-square error of estimating `Δx` from `y = √snr·Δx + z`;
    /// equals `dI/dsnr` in nats.
    pub fn mmse_at_snr(&self, snr: f64, shaping: &AntennaShaping) -> Result<f64> {
        if !(snr >= 0.0) || !snr.is_finite() {
            return Err(invalid("snr", format!("must be finite and >= 0, got {snr}")));
        }
        let symbols: Vec<Complex64> = shaping
            .alphabet()
            .iter()
            .map(|x| x * shaping.delta())
            .collect();
        let amp = snr.sqrt();
        let probs = shaping.probs();
        let log_probs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let m = symbols.len();
        let mut buf = vec![0.0; m];
        let mut total = 0.0;
        for i in 0..m {
            if probs[i] == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for &(z, w) in &self.grid {
                let y = symbols[i] * amp + z;
                let mut max = f64::NEG_INFINITY;
                for (b, (s, lp)) in buf.iter_mut().zip(symbols.iter().zip(&log_probs)) {
                    *b = lp - (y - s * amp).norm_sqr();
                    max = max.max(*b);
                }
                let mut sum = 0.0;
                // error E[x|y] − x_i accumulated as Σ_p w_p (x_p − x_i) to avoid cancellation
                let mut err = Complex64::new(0.0, 0.0);
                for (p, b) in buf.iter().enumerate() {
                    let e = (b - max).exp();
                    sum += e;
                    if p != i {
                        err += (symbols[p] - symbols[i]) * e;
                    }
                }
                inner += w * (err / sum).norm_sqr();
            }
            total += probs[i] * inner;
        }
        Ok(total)
    }

    /// MI of `y = gain·power·Δx + v`, `v ~ CN(0, σ²)`.
    pub fn mi(
        &self,
        gain: f64,
        power: f64,
        shaping: &AntennaShaping,
        noise_variance: f64,
    ) -> Result<f64> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(invalid("noise_variance", "must be positive and finite"));
        }
        self.mi_at_snr(gain * gain * power * power / noise_variance, shaping)
    }
}

/// Scalar-channel MI via the shared quadrature oracle.
pub fn mi_oracle_1d(
    gain: f64,
    power: f64,
    shaping: &AntennaShaping,
    noise_variance: f64,
) -> Result<f64> {
    ScalarOracle::shared().mi(gain, power, shaping, noise_variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::identity;
    use crate::model::build_joint;

    fn uniform_joint(order: usize, n: usize) -> JointConstellation {
        let s = AntennaShaping::uniform(order).unwrap();
        build_joint(&vec![s; n]).unwrap()
    }

    #[test]
    fn mc_config_rejects_zero_samples() {
        assert!(McConfig::new(0, 1).is_err());
        assert!(McConfig::new(1, 1).is_ok());
    }

    #[test]
    fn pure_noise_carries_nothing() {
        let eq = EquivalentChannel::new(vec![1.3416, 0.4472], 1e12).unwrap();
        let prec = PrecoderState::initial(2, 2.0).unwrap();
        let joint = uniform_joint(16, 2);
        let v = estimate_mi(&eq, &prec, &joint, &McConfig::new(200, 3).unwrap()).unwrap();
        assert!(v.bits.abs() <= 3.0 * v.std_error + 1e-9, "{v:?}");
    }

    #[test]
    fn noiseless_saturates_at_entropy() {
        let eq = EquivalentChannel::new(vec![1.3416, 0.4472], 1e-12).unwrap();
        let prec = PrecoderState::initial(2, 2.0).unwrap();
        let joint = uniform_joint(16, 2);
        let v = estimate_mi(&eq, &prec, &joint, &McConfig::new(50, 3).unwrap()).unwrap();
        assert!((v.bits - 8.0).abs() < 0.01, "{v:?}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let eq = EquivalentChannel::new(vec![1.2, 0.7], 0.3).unwrap();
        let prec = PrecoderState::initial(2, 2.0).unwrap();
        let joint = uniform_joint(4, 2);
        let mc = McConfig::new(300, 11).unwrap();
        let a = estimate_mi(&eq, &prec, &joint, &mc).unwrap();
        let b = estimate_mi(&eq, &prec, &joint, &mc).unwrap();
        assert_eq!(a.bits.to_bits(), b.bits.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        let c = estimate_mi(&eq, &prec, &joint, &McConfig::new(300, 12).unwrap()).unwrap();
        assert_ne!(a.bits, c.bits);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let eq = EquivalentChannel::new(vec![1.2, 0.7], 0.3).unwrap();
        let prec = PrecoderState::initial(2, 2.0).unwrap();
        let joint = uniform_joint(4, 2);
        let mc = McConfig::new(257, 5).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    (
                        estimate_mi(&eq, &prec, &joint, &mc).unwrap(),
                        grad_power(&eq, &prec, &joint, &mc).unwrap(),
                    )
                })
        };
        let (a, ga) = run(1);
        let (b, gb) = run(4);
        assert_eq!(a.bits.to_bits(), b.bits.to_bits());
        assert_eq!(ga, gb);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let eq = EquivalentChannel::new(vec![1.0, 1.0], 1.0).unwrap();
        let prec = PrecoderState::initial(2, 2.0).unwrap();
        let joint = uniform_joint(4, 1);
        assert!(matches!(
            estimate_mi(&eq, &prec, &joint, &McConfig::new(10, 0).unwrap()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_probability_symbols_are_skipped() {
        // 4-QAM with one dead point behaves like the 3-point constellation
        let a = crate::model::qam_alphabet(4).unwrap();
        let delta = std::f64::consts::FRAC_1_SQRT_2;
        let with_dead = JointConstellation::new(
            1,
            a.iter().map(|x| x * delta).collect(),
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0],
        )
        .unwrap();
        let without = JointConstellation::new(
            1,
            a[..3].iter().map(|x| x * delta).collect(),
            vec![1.0 / 3.0; 3],
        )
        .unwrap();
        let eq = EquivalentChannel::new(vec![1.0], 0.5).unwrap();
        let prec = PrecoderState::new(vec![1.0], identity(1), 1.0).unwrap();
        let mc = McConfig::new(200, 9).unwrap();
        let x = estimate_mi(&eq, &prec, &with_dead, &mc).unwrap();
        let y = estimate_mi(&eq, &prec, &without, &mc).unwrap();
        assert!((x.bits - y.bits).abs() < 1e-12);
    }

    #[test]
    fn oracle_limits() {
        let s = AntennaShaping::uniform(4).unwrap();
        assert!(mi_oracle_1d(1.0, 1.0, &s, 1e6).unwrap().abs() < 1e-3);
        assert!((mi_oracle_1d(1.0, 1.0, &s, 1e-4).unwrap() - 2.0).abs() < 1e-3);
        assert!(mi_oracle_1d(1.0, 1.0, &s, 0.0).is_err());
    }

    #[test]
    fn oracle_node_count_converged() {
        let coarse = ScalarOracle::new(64).unwrap();
        let fine = ScalarOracle::new(160).unwrap();
        let s = AntennaShaping::uniform(16).unwrap();
        for snr_db in [-10.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0] {
            let snr = 10f64.powf(snr_db / 10.0);
            let a = ScalarOracle::shared().mi_at_snr(snr, &s).unwrap();
            let b = fine.mi_at_snr(snr, &s).unwrap();
            let c = coarse.mi_at_snr(snr, &s).unwrap();
            assert!((a - b).abs() < 1e-5, "{snr_db} dB: {a} vs {b}");
            assert!((c - b).abs() < 1e-4, "{snr_db} dB: {c} vs {b}");
        }
    }

    fn unstructured(joint: &JointConstellation) -> JointConstellation {
        let vectors = (0..joint.len()).flat_map(|p| joint.vector(p).to_vec()).collect();
        JointConstellation::new(joint.dim(), vectors, joint.probs().to_vec()).unwrap()
    }

    fn mixing_rotation() -> CMatrix {
        let r = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.3),
                Complex64::new(0.7, -0.2),
                Complex64::new(-0.7, -0.2),
                Complex64::new(0.0, -0.5),
            ],
        );
        crate::linalg::expm_skew_hermitian(&r, 1.0)
    }

    #[test]
    fn fast_exp_matches_libm() {
        let mut worst: f64 = 0.0;
        for j in 0..200_000 {
            let x = -40.0 * j as f64 / 200_000.0;
            let rel = (exp_pruned(x) - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
        }
        assert!(worst < 1e-15, "{worst}");
        assert_eq!(exp_pruned(-40.0), 0.0);
        assert_eq!(exp_pruned(f64::NEG_INFINITY), 0.0);
        assert_eq!(exp_above(-300.0, -350.0).to_bits(), exp_above(-300.0, -350.0).to_bits());
        assert!(((exp_above(-300.0, -350.0) / (-300f64).exp()) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lane_reductions_agree_with_naive() {
        let a: Vec<f64> = (0..261).map(|k| ((k * 37 % 101) as f64 - 50.0) / 7.0).collect();
        let b: Vec<f64> = (0..261).map(|k| ((k * 13 % 29) as f64) / 3.0).collect();
        let naive_sum: f64 = a.iter().sum();
        let naive_dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((lane_sum(&a) - naive_sum).abs() < 1e-10);
        assert!((lane_dot(&a, &b) - naive_dot).abs() < 1e-9);
        assert_eq!(lane_max(&a), a.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn product_form_matches_direct_evaluation() {
        let s1 = AntennaShaping::from_delta(16, 0.28).unwrap();
        let s2 = AntennaShaping::uniform(16).unwrap();
        let joint = build_joint(&[s1, s2]).unwrap();
        let plain = unstructured(&joint);
        let prec = PrecoderState::new(vec![1.2, 0.6], mixing_rotation(), 1.8).unwrap();
        let mc = McConfig::new(40, 2).unwrap();
        // the last noise level forces the fallback for most received points
        for noise in [2.0, 0.3, 0.02, 1e-4] {
            let eq = EquivalentChannel::new(vec![1.3416, 0.4472], noise).unwrap();
            let a = estimate_mi(&eq, &prec, &joint, &mc).unwrap();
            let b = estimate_mi(&eq, &prec, &plain, &mc).unwrap();
            assert!((a.bits - b.bits).abs() < 1e-11, "{noise}: {a:?} {b:?}");
            let ga = gradients(&eq, &prec, &joint, &mc).unwrap();
            let gb = gradients(&eq, &prec, &plain, &mc).unwrap();
            let scale = 1.0 + gb.rotation.norm();
            assert!((&ga.rotation - &gb.rotation).norm() < 1e-9 * scale, "{noise}");
            for (x, y) in ga.power.iter().zip(&gb.power) {
                assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()), "{noise}: {x} {y}");
            }
        }
    }

    #[test]
    fn power_gradient_is_projection_of_rotation_gradient() {
        // ∂I/∂g_k = 2·Re(ΓΦᴴ)_kk / g_k
        let joint = uniform_joint(4, 2);
        let prec = PrecoderState::new(vec![1.1, 0.8], mixing_rotation(), 1.85).unwrap();
        let eq = EquivalentChannel::new(vec![1.2, 0.5], 0.4).unwrap();
        let g = gradients(&eq, &prec, &joint, &McConfig::new(100, 4).unwrap()).unwrap();
        let along = &g.rotation * prec.rotation().adjoint();
        for k in 0..2 {
            let expect = 2.0 * along[(k, k)].re / prec.power_diag()[k];
            assert!((g.power[k] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }
}

