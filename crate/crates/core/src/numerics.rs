//! Dense linear algebra shared by every projection in the crate.
//!
//! All routines work in `f64` and treat singular values below
//! `rel_tol * sigma_max` as exact zeros.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense row/column matrix of `f64`.
pub type Matrix = DMatrix<f64>;

/// Relative singular-value cutoff used to decide numerical rank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankTolerance(f64);

impl RankTolerance {
    pub const DEFAULT: f64 = 1e-10;

    pub fn new(rel_tol: f64) -> Result<Self> {
        if rel_tol.is_finite() && rel_tol > 0.0 && rel_tol < 1.0 {
            Ok(Self(rel_tol))
        } else {
            Err(Error::invalid(format!(
                "rank tolerance must lie in (0, 1), got {rel_tol}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Absolute cutoff for a spectrum whose largest value is `max`.
    pub fn cutoff(self, max: f64) -> f64 {
        self.0 * max
    }
}

impl Default for RankTolerance {
    fn default() -> Self {
        Self(Self::DEFAULT)
    }
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::invalid(format!("{what} has an empty dimension")));
    }
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "{what} has a non-finite entry at ({}, {})",
            pos % m.nrows(),
            pos / m.nrows()
        )));
    }
    Ok(())
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Thin SVD with singular values sorted in descending order.
pub struct Decomposition {
    pub u: Matrix,
    pub singular_values: DVector<f64>,
    pub v_t: Matrix,
}

impl Decomposition {
    /// Number of singular values above the relative cutoff.
    pub fn rank(&self, tol: RankTolerance) -> usize {
        let max = self.singular_values.iter().copied().fold(0.0, f64::max);
        if max == 0.0 {
            return 0;
        }
        let cut = tol.cutoff(max);
        self.singular_values.iter().filter(|&&s| s > cut).count()
    }
}

fn to_faer(m: &Matrix) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn svd(m: &Matrix) -> Result<Decomposition> {
    ensure_finite(m, "matrix")?;
    if m.is_empty() {
        return Ok(Decomposition {
            u: Matrix::zeros(m.nrows(), 0),
            singular_values: DVector::zeros(0),
            v_t: Matrix::zeros(0, m.ncols()),
        });
    }
    let d = to_faer(m)
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let k = m.nrows().min(m.ncols());
    let values: Vec<f64> = (0..k).map(|i| d.S()[i]).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let (u, v) = (from_faer(d.U()), from_faer(d.V()));
    Ok(Decomposition {
        u: Matrix::from_fn(m.nrows(), k, |i, j| u[(i, order[j])]),
        singular_values: DVector::from_fn(k, |j, _| values[order[j]]),
        v_t: Matrix::from_fn(k, m.ncols(), |i, j| v[(j, order[i])]),
    })
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
pub struct Eigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `values`.
    pub vectors: Matrix,
}

/// Eigendecomposition of the symmetric part of a square matrix.
pub fn sym_eigen(m: &Matrix) -> Result<Eigen> {
    ensure_finite(m, "matrix")?;
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "matrix must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Eigen {
            values: DVector::zeros(0),
            vectors: Matrix::zeros(0, 0),
        });
    }
    let sym = (m + m.transpose()) * 0.5;
    let e = to_faer(&sym)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition did not converge: {e:?}")))?;
    let values: Vec<f64> = (0..n).map(|i| e.S()[i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let u = from_faer(e.U());
    Ok(Eigen {
        values: DVector::from_fn(n, |j, _| values[order[j]]),
        vectors: Matrix::from_fn(n, n, |i, j| u[(i, order[j])]),
    })
}

/// Moore-Penrose pseudoinverse via SVD.
pub fn pinv(m: &Matrix, tol: RankTolerance) -> Result<Matrix> {
    let d = svd(m)?;
    let r = d.rank(tol);
    let mut out = Matrix::zeros(m.ncols(), m.nrows());
    for i in 0..r {
        let s = d.singular_values[i];
        let v = d.v_t.row(i).transpose();
        let u = d.u.column(i);
        out += (v / s) * u.transpose();
    }
    Ok(out)
}

/// Orthonormal basis (as columns) of the column space of `m`.
pub fn colspace_basis(m: &Matrix, tol: RankTolerance) -> Result<Matrix> {
    let d = svd(m)?;
    let r = d.rank(tol);
    Ok(d.u.columns(0, r).into_owned())
}

/// Orthogonal projector onto the column space of `m`.
pub fn colspace_projector(m: &Matrix, tol: RankTolerance) -> Result<Matrix> {
    let basis = colspace_basis(m, tol)?;
    Ok(&basis * basis.transpose())
}

fn ensure_symmetric(m: &Matrix, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = max_abs(m).max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::invalid(format!(
                    "{what} is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

fn symmetric_eigen(m: &Matrix, what: &str, tol: RankTolerance) -> Result<Eigen> {
    ensure_finite(m, what)?;
    ensure_symmetric(m, what)?;
    let eig = sym_eigen(m)?;
    let max = eig.values.iter().copied().fold(0.0, f64::max);
    let min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -tol.cutoff(max) && min < 0.0 {
        return Err(Error::invalid(format!(
            "{what} is not positive semi-definite: eigenvalue {min:e} (largest {max:e})"
        )));
    }
    Ok(eig)
}

/// Square roots of eigenvalues, with every eigenvalue at or below
/// `rel_tol * lambda_max` (including small negatives) set to exactly zero.
/// The cutoff applies to eigenvalues, not roots: rounding noise of order
/// `eps * lambda_max` would otherwise survive as roots of order `sqrt(eps)`.
fn clamped_roots(values: &DVector<f64>, tol: RankTolerance) -> DVector<f64> {
    let max = values.iter().copied().fold(0.0, f64::max);
    let cut = tol.cutoff(max);
    values.map(|l| if l > cut && l > 0.0 { l.sqrt() } else { 0.0 })
}

/// Symmetric PSD square root via eigendecomposition.
pub fn psd_sqrt(m: &Matrix, tol: RankTolerance) -> Result<Matrix> {
    let eig = symmetric_eigen(m, "matrix", tol)?;
    let roots = clamped_roots(&eig.values, tol);
    Ok(recompose(&eig.vectors, &roots))
}

fn recompose(vectors: &Matrix, values: &DVector<f64>) -> Matrix {
    let mut scaled = vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[j];
    }
    let out = scaled * vectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Square root of a covariance together with its pseudoinverse (the
/// whitening transform). Returned as `(root, whitening)`.
pub fn whitening_pair(sigma: &Matrix, tol: RankTolerance) -> Result<(Matrix, Matrix)> {
    let eig = symmetric_eigen(sigma, "covariance", tol)?;
    let roots = clamped_roots(&eig.values, tol);
    let inv_roots = roots.map(|r| if r > 0.0 { 1.0 / r } else { 0.0 });
    let root = recompose(&eig.vectors, &roots);
    let white = recompose(&eig.vectors, &inv_roots);
    Ok((root, white))
}

/// Whitening transform `W = pinv(sqrt(sigma))`.
pub fn whitening(sigma: &Matrix, tol: RankTolerance) -> Result<Matrix> {
    let root = psd_sqrt(sigma, tol)?;
    pinv(&root, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let d = max_abs(&(a - b));
        assert!(d < tol, "max deviation {d:e} exceeds {tol:e}\n{a}\n{b}");
    }

    fn penrose(m: &Matrix, p: &Matrix, tol: f64) {
        assert_close(&(m * p * m), m, tol);
        assert_close(&(p * m * p), p, tol);
        let mp = m * p;
        assert_close(&mp.transpose(), &mp, tol);
        let pm = p * m;
        assert_close(&pm.transpose(), &pm, tol);
    }

    #[test]
    fn pinv_identity_and_diagonal() {
        let t = RankTolerance::default();
        let i2 = Matrix::identity(2, 2);
        assert_close(&pinv(&i2, t).unwrap(), &i2, 1e-15);
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let expect = Matrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]));
        assert_close(&pinv(&d, t).unwrap(), &expect, 1e-15);
    }

    #[test]
    fn pinv_random_penrose_conditions() {
        let m = random(3, 2, 7);
        let p = pinv(&m, RankTolerance::default()).unwrap();
        penrose(&m, &p, 1e-10);
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let mut m = Matrix::identity(2, 2);
        m[(1, 0)] = f64::NAN;
        assert!(matches!(
            pinv(&m, RankTolerance::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let z = Matrix::zeros(3, 2);
        assert_eq!(
            pinv(&z, RankTolerance::default()).unwrap(),
            Matrix::zeros(2, 3)
        );
    }

    #[test]
    fn psd_sqrt_cases() {
        let t = RankTolerance::default();
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let expect = Matrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert_close(&psd_sqrt(&d, t).unwrap(), &expect, 1e-14);
        assert_close(
            &psd_sqrt(&Matrix::zeros(3, 3), t).unwrap(),
            &Matrix::zeros(3, 3),
            1e-300,
        );

        let a = random(4, 4, 11);
        let s = &a * a.transpose();
        let r = psd_sqrt(&s, t).unwrap();
        assert_close(&(&r * &r), &s, 1e-10);
        assert_close(&r.transpose(), &r, 1e-300);
    }

    #[test]
    fn psd_sqrt_rejects_bad_input() {
        let t = RankTolerance::default();
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(psd_sqrt(&asym, t).is_err());
        let indefinite = Matrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        let err = psd_sqrt(&indefinite, t).unwrap_err().to_string();
        assert!(err.contains("-5e-1"), "{err}");
    }

    #[test]
    fn whitening_cases() {
        let t = RankTolerance::default();
        let i3 = Matrix::identity(3, 3);
        assert_close(&whitening(&i3, t).unwrap(), &i3, 1e-14);
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.0]));
        let expect = Matrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]));
        assert_close(&whitening(&d, t).unwrap(), &expect, 1e-14);

        let a = random(5, 5, 3);
        let sigma = &a * a.transpose() + Matrix::identity(5, 5) * 0.1;
        let w = whitening(&sigma, t).unwrap();
        assert_close(
            &(&w * &sigma * w.transpose()),
            &Matrix::identity(5, 5),
            1e-9,
        );
        let (root, w2) = whitening_pair(&sigma, t).unwrap();
        assert_close(&w2, &w, 1e-9);
        assert_close(&(&root * &root), &sigma, 1e-10);
    }

    #[test]
    fn whitening_rank_deficient_gives_range_projector() {
        let t = RankTolerance::default();
        let a = random(4, 2, 19);
        let sigma = &a * a.transpose();
        let w = whitening(&sigma, t).unwrap();
        let p = &w * &sigma * w.transpose();
        let expect = colspace_projector(&a, t).unwrap();
        assert_close(&p, &expect, 1e-9);
    }

    #[test]
    fn colspace_projector_cases() {
        let t = RankTolerance::default();
        let e1 = Matrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let expect = Matrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_close(&colspace_projector(&e1, t).unwrap(), &expect, 1e-15);
        let i4 = Matrix::identity(4, 4);
        assert_close(&colspace_projector(&i4, t).unwrap(), &i4, 1e-14);

        let m = random(4, 2, 5) * random(2, 3, 6);
        let p = colspace_projector(&m, t).unwrap();
        assert_close(&(&p * &p), &p, 1e-10);
        assert_close(&p.transpose(), &p, 1e-10);
        assert_close(&(&p * &m), &m, 1e-10);
        assert_eq!(colspace_basis(&m, t).unwrap().ncols(), 2);
    }

    #[test]
    fn rank_tolerance_bounds() {
        assert!(RankTolerance::new(0.0).is_err());
        assert!(RankTolerance::new(1.0).is_err());
        assert!(RankTolerance::new(f64::NAN).is_err());
        assert_eq!(RankTolerance::new(1e-6).unwrap().value(), 1e-6);
    }
}
