use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{psd_sqrt, svd, whitening_pair, Matrix, RankTolerance};
use crate::rng::stream_rng;
use crate::stats::{Role, SampleBatch};

/// A unit direction along which a concept coordinate is injected.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedAxis {
    pub direction: DVector<f64>,
    pub strength: f64,
}

impl PlantedAxis {
    pub fn new(direction: DVector<f64>, strength: f64) -> Result<Self> {
        let norm = direction.norm();
        if !norm.is_finite() || norm == 0.0 || !strength.is_finite() {
            return Err(Error::invalid(
                "planted axis needs a finite nonzero direction and finite strength",
            ));
        }
        Ok(Self {
            direction: direction / norm,
            strength,
        })
    }
}

/// `X = Σ_k strength_k · axis_k · z_k + noise_scale · ε` with independent
/// standard normal concept coordinates `z_k` (one per bias / feature axis)
/// and isotropic noise `ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSpec {
    pub dim_x: usize,
    pub bias_axes: Vec<PlantedAxis>,
    pub feature_axes: Vec<PlantedAxis>,
    pub noise_scale: f64,
    pub orthogonal_mode: bool,
}

/// `k` orthonormal columns in `R^dim`, drawn from a Gaussian matrix.
pub fn random_orthonormal(dim: usize, k: usize, seed: u64) -> Result<Matrix> {
    if k > dim || k == 0 {
        return Err(Error::invalid(format!(
            "cannot draw {k} orthonormal axes in dimension {dim}"
        )));
    }
    let mut rng = stream_rng(seed, 0x0a7e5);
    let g = Matrix::from_fn(dim, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    Ok(q.columns(0, k).into_owned())
}

impl PlantedSpec {
    pub fn dim_zb(&self) -> usize {
        self.bias_axes.len()
    }

    pub fn dim_zf(&self) -> usize {
        self.feature_axes.len()
    }

    /// Bias and feature axes drawn from one random orthonormal frame.
    pub fn orthogonal(
        dim_x: usize,
        bias_strengths: &[f64],
        feature_strengths: &[f64],
        noise_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let k = bias_strengths.len() + feature_strengths.len();
        let frame = random_orthonormal(dim_x, k, seed)?;
        let axis = |j: usize, s: f64| PlantedAxis::new(frame.column(j).into_owned(), s);
        let nb = bias_strengths.len();
        let spec = Self {
            dim_x,
            bias_axes: bias_strengths
                .iter()
                .enumerate()
                .map(|(j, &s)| axis(j, s))
                .collect::<Result<_>>()?,
            feature_axes: feature_strengths
                .iter()
                .enumerate()
                .map(|(j, &s)| axis(nb + j, s))
                .collect::<Result<_>>()?,
            noise_scale,
            orthogonal_mode: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Both concepts injected along the same random axis.
    pub fn shared_axis(
        dim_x: usize,
        bias_strength: f64,
        feature_strength: f64,
        noise_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let a = random_orthonormal(dim_x, 1, seed)?.column(0).into_owned();
        let spec = Self {
            dim_x,
            bias_axes: vec![PlantedAxis::new(a.clone(), bias_strength)?],
            feature_axes: vec![PlantedAxis::new(a, feature_strength)?],
            noise_scale,
            orthogonal_mode: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Independent random (generally non-orthogonal) axes.
    pub fn random(
        dim_x: usize,
        dim_zb: usize,
        dim_zf: usize,
        strength: f64,
        noise_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = stream_rng(seed, 0x0a7e6);
        let mut draw = || {
            let v = DVector::from_fn(dim_x, |_, _| rng.sample::<f64, _>(StandardNormal));
            PlantedAxis::new(v, strength)
        };
        let bias_axes = (0..dim_zb).map(|_| draw()).collect::<Result<_>>()?;
        let feature_axes = (0..dim_zf).map(|_| draw()).collect::<Result<_>>()?;
        let spec = Self {
            dim_x,
            bias_axes,
            feature_axes,
            noise_scale,
            orthogonal_mode: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_x == 0 || self.bias_axes.is_empty() || self.feature_axes.is_empty() {
            return Err(Error::invalid(
                "planted spec needs dim_x >= 1 and at least one bias and one feature axis",
            ));
        }
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::invalid(format!(
                "noise_scale must be > 0, got {}",
                self.noise_scale
            )));
        }
        for a in self.bias_axes.iter().chain(&self.feature_axes) {
            if a.direction.len() != self.dim_x {
                return Err(Error::invalid(format!(
                    "axis has dimension {}, expected {}",
                    a.direction.len(),
                    self.dim_x
                )));
            }
        }
        if self.orthogonal_mode {
            for b in &self.bias_axes {
                for f in &self.feature_axes {
                    let dot = b.direction.dot(&f.direction);
                    if dot.abs() >= 1e-12 {
                        return Err(Error::invalid(format!(
                            "orthogonal mode: bias and feature axes have dot product {dot:e}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Columns `strength_k · axis_k`, bias axes first.
    fn mixing(&self) -> Matrix {
        let axes: Vec<&PlantedAxis> = self.bias_axes.iter().chain(&self.feature_axes).collect();
        Matrix::from_fn(self.dim_x, axes.len(), |i, j| {
            axes[j].strength * axes[j].direction[i]
        })
    }

    /// Population covariance of the joint vector `(X, Zb, Zf)`.
    pub fn population_covariance(&self) -> Matrix {
        let a = self.mixing();
        let n = self.dim_x;
        let k = a.ncols();
        let mut c = Matrix::identity(n + k, n + k);
        let xx = &a * a.transpose() + Matrix::identity(n, n) * self.noise_scale.powi(2);
        c.view_mut((0, 0), (n, n)).copy_from(&xx);
        c.view_mut((0, n), (n, k)).copy_from(&a);
        c.view_mut((n, 0), (k, n)).copy_from(&a.transpose());
        c
    }
}

/// Paired `X`, `Zb`, `Zf` samples.
#[derive(Clone, Debug)]
pub struct GaussianTriple {
    pub x: SampleBatch,
    pub zb: SampleBatch,
    pub zf: SampleBatch,
}

/// Rewrite `data` (rows are samples) so that its sample covariance
/// (n - 1 denominator) equals `target` and its mean is zero.
pub fn match_covariance(data: &mut Matrix, target: &Matrix) -> Result<()> {
    let n = data.nrows();
    if n < data.ncols() + 2 {
        return Err(Error::InsufficientData(format!(
            "exact mode needs more samples ({n}) than dimensions ({}) + 1",
            data.ncols()
        )));
    }
    let mean = data.row_mean();
    for mut row in data.row_iter_mut() {
        row -= &mean;
    }
    let cov = data.transpose() * &*data / (n as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    let tol = RankTolerance::default();
    if svd(&cov)?.rank(tol) < cov.nrows() {
        return Err(Error::Numerical(
            "sample covariance is singular; cannot match exactly".into(),
        ));
    }
    let inv_root = whitening_pair(&cov, tol)?.1;
    let target_root = psd_sqrt(target, tol)?;
    *data = &*data * inv_root * target_root;
    Ok(())
}

/// Draw `n` samples from the planted model. With `exact`, samples are
/// post-transformed so that the empirical covariances equal the population
/// ones to rounding error.
pub fn gen_gaussian_triple(
    spec: &PlantedSpec,
    n: usize,
    seed: u64,
    exact: bool,
) -> Result<GaussianTriple> {
    spec.validate()?;
    let dx = spec.dim_x;
    let (kb, kf) = (spec.dim_zb(), spec.dim_zf());
    if n < dx + 2 {
        return Err(Error::invalid(format!(
            "need n >= dim_x + 2 = {}, got {n}",
            dx + 2
        )));
    }
    let mixing = spec.mixing();
    let mut rng = stream_rng(seed, 1);
    let z = Matrix::from_fn(n, kb + kf, |_, _| rng.sample::<f64, _>(StandardNormal));
    let eps = Matrix::from_fn(n, dx, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = &z * mixing.transpose() + eps * spec.noise_scale;

    let mut joint = Matrix::zeros(n, dx + kb + kf);
    joint.columns_mut(0, dx).copy_from(&x);
    joint.columns_mut(dx, kb + kf).copy_from(&z);
    if exact {
        match_covariance(&mut joint, &spec.population_covariance())?;
    }
    Ok(GaussianTriple {
        x: SampleBatch::new(Role::X, joint.columns(0, dx).into_owned())?,
        zb: SampleBatch::new(Role::Zb, joint.columns(dx, kb).into_owned())?,
        zf: SampleBatch::new(Role::Zf, joint.columns(dx + kb, kf).into_owned())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs;
    use crate::stats::estimate;

    #[test]
    fn exact_mode_matches_population() {
        let spec = PlantedSpec::orthogonal(6, &[0.8, 0.5], &[1.5], 1.0, 3).unwrap();
        let t = gen_gaussian_triple(&spec, 200, 41, true).unwrap();
        let b = estimate(&[&t.x, &t.zb, &t.zf]).unwrap();
        let pop = spec.population_covariance();
        assert!(max_abs(&(b.sigma_xx().unwrap() - pop.view((0, 0), (6, 6)))) < 1e-12);
        assert!(max_abs(&(b.sigma_xzb().unwrap() - pop.view((0, 6), (6, 2)))) < 1e-12);
        assert!(max_abs(&(b.sigma_xzf().unwrap() - pop.view((0, 8), (6, 1)))) < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = PlantedSpec::random(4, 1, 1, 1.0, 0.5, 9).unwrap();
        let a = gen_gaussian_triple(&spec, 30, 5, false).unwrap();
        let b = gen_gaussian_triple(&spec, 30, 5, false).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.zf, b.zf);
        let c = gen_gaussian_triple(&spec, 30, 6, false).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn invalid_specs() {
        assert!(PlantedSpec::orthogonal(2, &[1.0, 1.0], &[1.0], 1.0, 1).is_err());
        assert!(PlantedSpec::orthogonal(4, &[1.0], &[1.0], 0.0, 1).is_err());
        let spec = PlantedSpec::orthogonal(4, &[1.0], &[1.0], 1.0, 1).unwrap();
        assert!(gen_gaussian_triple(&spec, 5, 1, false).is_err());
        let mut bad = spec.clone();
        bad.feature_axes[0].direction = bad.bias_axes[0].direction.clone();
        assert!(bad.validate().is_err());
    }
}
