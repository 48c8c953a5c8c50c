//! Test-side oracles. Nothing here calls the crate's numerics or stats, so
//! agreement with the implementation is an independent check.
#![allow(dead_code)]

use dualdebias::Matrix;
use nalgebra::DVector;

/// Two-pass sample covariance `cov(a, b)` (divisor `n - 1`).
pub fn naive_cov(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.nrows();
    let ma = a.row_mean();
    let mb = b.row_mean();
    let mut out = Matrix::zeros(a.ncols(), b.ncols());
    for r in 0..n {
        for i in 0..a.ncols() {
            for j in 0..b.ncols() {
                out[(i, j)] += (a[(r, i)] - ma[i]) * (b[(r, j)] - mb[j]);
            }
        }
    }
    out / (n as f64 - 1.0)
}

/// Relative max-abs difference, with unit floor on the scale.
pub fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    let scale = b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Mean squared residual `E‖(P - I) x‖²` over centered rows of `x`.
pub fn erasure_error(p: &Matrix, x: &Matrix) -> f64 {
    let mean: DVector<f64> = x.row_mean().transpose();
    let d = p.nrows();
    let resid = p - Matrix::identity(d, d);
    let mut total = 0.0;
    for r in 0..x.nrows() {
        let xc = x.row(r).transpose() - &mean;
        total += (&resid * xc).norm_squared();
    }
    total / x.nrows() as f64
}

/// Mean squared regression error `E‖v - S u‖²` over centered rows.
pub fn regression_error(s: &Matrix, u: &Matrix, v: &Matrix) -> f64 {
    let mu: DVector<f64> = u.row_mean().transpose();
    let mv: DVector<f64> = v.row_mean().transpose();
    let mut total = 0.0;
    for r in 0..u.nrows() {
        let uc = u.row(r).transpose() - &mu;
        let vc = v.row(r).transpose() - &mv;
        total += (vc - s * uc).norm_squared();
    }
    total / u.nrows() as f64
}

/// Orthonormal basis of the orthogonal complement of `colspace(c)`, by
/// Gram-Schmidt over the standard basis.
pub fn complement_basis(c: &Matrix) -> Matrix {
    let d = c.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..c.ncols() {
        let mut v = c.column(j).into_owned();
        for b in &basis {
            v -= b * b.dot(&v);
        }
        if v.norm() > 1e-10 {
            basis.push(v.normalize());
        }
    }
    let k = basis.len();
    for i in 0..d {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        for b in &basis {
            v -= b * b.dot(&v);
        }
        if v.norm() > 1e-8 {
            basis.push(v.normalize());
        }
    }
    let rest = &basis[k..];
    Matrix::from_fn(d, rest.len(), |i, j| rest[j][i])
}

/// Constrained least squares by the method of multipliers:
/// `min_S tr(S Σ_UU Sᵀ) - 2 tr(S Σ_UV)` subject to `S C = 0`.
/// Each inner step solves the penalised normal equations with an LU
/// factorisation; multipliers are updated until the constraint residual
/// stalls.
pub fn penalty_oracle(sigma_uu: &Matrix, sigma_vu: &Matrix, c: &Matrix) -> Matrix {
    let scale = sigma_uu.trace() / sigma_uu.nrows() as f64;
    let c = c / c.norm().max(1e-300);
    let mu = 1e3 * scale;
    let lhs = sigma_uu + &c * c.transpose() * (mu / 2.0);
    let lu = lhs.clone().lu();
    let mut lambda = Matrix::zeros(sigma_vu.nrows(), c.ncols());
    let mut s = Matrix::zeros(sigma_vu.nrows(), sigma_uu.ncols());
    for _ in 0..500 {
        let rhs = sigma_vu - &lambda * c.transpose() * 0.5;
        s = lu
            .solve(&rhs.transpose())
            .expect("penalised system is nonsingular")
            .transpose();
        let resid = &s * &c;
        lambda += &resid * mu;
        if max_abs(&resid) < 1e-15 * max_abs(&s).max(1.0) {
            break;
        }
    }
    s
}
