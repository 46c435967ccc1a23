//! Small dense complex matrix helpers on top of `nalgebra`.
//!
//! Matrices here are tiny (N_t × N_t with N_t rarely above 4), so every
//! routine favours exactness over speed.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// `‖A·Aᴴ − I‖_F`.
pub fn unitarity_defect(a: &CMatrix) -> f64 {
    let n = a.nrows();
    (a * a.adjoint() - identity(n)).norm()
}

/// `‖A + Aᴴ‖_F`, zero for skew-Hermitian input.
pub fn skew_defect(a: &CMatrix) -> f64 {
    (a + a.adjoint()).norm()
}

/// Real part of the Frobenius inner product `trace(Aᴴ·B)`.
pub fn re_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Exponential of a skew-Hermitian matrix scaled by `step`.
///
/// Writes `R = i·H` with `H = −i·R` Hermitian, diagonalises `H = Q Λ Qᴴ` and
/// returns `Q·diag(exp(i·step·λ))·Qᴴ`, which is unitary up to the accuracy of
/// the eigenvectors.
pub fn expm_skew_hermitian(r: &CMatrix, step: f64) -> CMatrix {
    let n = r.nrows();
    let mut h = r.map(|z| -I * z);
    // symmetrise against round-off so the Hermitian solver sees exact input
    let ht = h.adjoint();
    h = (h + ht).map(|z| z * 0.5);
    let eig = SymmetricEigen::new(h);
    let q = eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, step * lam);
        for i in 0..n {
            scaled[(i, j)] *= phase;
        }
    }
    scaled * q.adjoint()
}

/// Nearest unitary matrix in Frobenius norm (polar factor `U·Vᴴ` of the SVD).
pub fn polar_unitary(a: &CMatrix) -> CMatrix {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    u * v_t
}
