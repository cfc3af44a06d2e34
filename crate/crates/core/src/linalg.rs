//! Small complex linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{FbError, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Draws a circularly-symmetric complex Gaussian with the given variance.
pub fn cn<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

pub fn cn_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, variance: f64) -> CMat {
    // column-major fill keeps the draw order tied to nalgebra's storage
    CMat::from_fn(rows, cols, |_, _| cn(rng, variance))
}

pub fn cn_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> CVec {
    CVec::from_fn(len, |_, _| cn(rng, variance))
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Scaled identity `s * I`.
pub fn scaled_identity(n: usize, s: f64) -> CMat {
    CMat::from_diagonal_element(n, n, c(s, 0.0))
}

/// Accumulates `v v^H` into `acc`.
pub fn add_outer(acc: &mut CMat, v: &CVec) {
    add_outer_scaled(acc, v, 1.0);
}

/// `acc += scale * v v^H`.
pub fn add_outer_scaled(acc: &mut CMat, v: &CVec, scale: f64) {
    let n = v.len();
    for j in 0..n {
        let vj = v[j].conj() * scale;
        for i in 0..n {
            acc[(i, j)] += v[i] * vj;
        }
    }
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5, 0.0)
}

pub fn cholesky(m: &CMat, context: &str) -> Result<Cholesky<C64, Dyn>> {
    Cholesky::new(hermitian_part(m))
        .ok_or_else(|| FbError::Singular(format!("{context}: matrix is not positive definite")))
}

/// Solves `A x = B` for Hermitian positive-definite `A`.
pub fn solve_hpd(a: &CMat, b: &CMat, context: &str) -> Result<CMat> {
    Ok(cholesky(a, context)?.solve(b))
}

pub fn solve_hpd_vec(a: &CMat, b: &CVec, context: &str) -> Result<CVec> {
    Ok(cholesky(a, context)?.solve(b))
}

/// `log2 det` of a Hermitian positive-definite matrix.
pub fn log2_det_hpd(a: &CMat, context: &str) -> Result<f64> {
    let chol = cholesky(a, context)?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        acc += l[(i, i)].re.ln();
    }
    Ok(2.0 * acc / std::f64::consts::LN_2)
}

pub fn frobenius_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn vec_norm_sq(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `|<a, b>| / (|a| |b|)`; zero when either vector vanishes.
pub fn cosine_similarity(a: &CVec, b: &CVec) -> f64 {
    let na = vec_norm_sq(a).sqrt();
    let nb = vec_norm_sq(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dotc(b).norm() / (na * nb)
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Power carried by each row (antenna) of a precoder block.
pub fn row_powers(m: &CMat) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|z| z.norm_sqr()).sum())
        .collect()
}

pub fn real_matrix_to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| c(x, 0.0))
}
