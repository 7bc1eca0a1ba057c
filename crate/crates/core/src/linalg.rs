//! Small complex linear-algebra helpers shared by the channel model, the
//! receivers and the conic embedding.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

pub type C64 = Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

/// `a^H b`.
pub fn inner(a: &CVector, b: &CVector) -> C64 {
    a.dotc(b)
}

/// `u^H H w`, the scalar seen after receive filtering.
pub fn effective_gain(u: &CVector, h: &CMatrix, w: &CVector) -> C64 {
    u.dotc(&(h * w))
}

/// Row vector `u^H H` returned as a plain coefficient list of length `N`,
/// so that `u^H H w = sum_n c[n] * w[n]`.
pub fn filtered_channel(u: &CVector, h: &CMatrix) -> Vec<C64> {
    (0..h.ncols())
        .map(|n| h.column(n).iter().zip(u.iter()).map(|(hm, um)| um.conj() * hm).sum())
        .collect()
}

pub fn norm_sqr(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Right singular vectors of `h`, ordered by decreasing singular value, each
/// with unit norm.
pub fn right_singular_vectors(h: &CMatrix) -> Vec<(f64, CVector)> {
    let svd = h.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut pairs: Vec<(f64, CVector)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, v_t.row(i).adjoint()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Vertically stack matrices with equal column counts.
pub fn vstack(blocks: &[&CMatrix]) -> CMatrix {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        out.view_mut((r0, 0), (b.nrows(), cols)).copy_from(b);
        r0 += b.nrows();
    }
    out
}

pub fn is_finite(v: &CVector) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Unit-norm maximizer of `x^H A x / x^H B x` for Hermitian `A` and positive
/// definite `B`; `None` when `B` is not positive definite.
pub fn generalized_dominant(a: &CMatrix, b: &CMatrix) -> Option<CVector> {
    let l = Cholesky::new(b.clone())?.l();
    let l_inv = l.clone().try_inverse()?;
    let m = &l_inv * a * l_inv.adjoint();
    let m = (&m + m.adjoint()) * C64::from(0.5);
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.imax();
    let y = eig.eigenvectors.column(top).into_owned();
    let x = l_inv.adjoint() * y;
    let n = x.norm();
    (n > 0.0 && n.is_finite()).then(|| x / C64::from(n))
}
