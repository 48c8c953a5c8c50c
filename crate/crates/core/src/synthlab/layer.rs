use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::gaussian::{match_covariance, PlantedAxis};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::stream_rng;
use crate::stats::{Role, SampleBatch};

/// Synthetic linear layer `V = S U - ε`.
///
/// Keys are `U = base + Σ_k strength_k · axis_k · z_k` with isotropic
/// unit-variance `base`; noise `ε` is isotropic with standard deviation
/// `noise_scale` and independent of `U`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerDataSpec {
    /// `n x m`.
    pub planted_s: Matrix,
    pub noise_scale: f64,
    /// Axes in key space (`R^m`).
    pub bias_axes: Vec<PlantedAxis>,
    pub feature_axes: Vec<PlantedAxis>,
}

impl LayerDataSpec {
    /// Concepts that reach the keys through the layer's row space: each
    /// output-space direction `b` becomes key axis `Sᵀ b`.
    pub fn through_outputs(
        planted_s: Matrix,
        noise_scale: f64,
        bias_outputs: &[(DVector<f64>, f64)],
        feature_outputs: &[(DVector<f64>, f64)],
    ) -> Result<Self> {
        let lift = |list: &[(DVector<f64>, f64)]| -> Result<Vec<PlantedAxis>> {
            list.iter()
                .map(|(b, s)| {
                    if b.len() != planted_s.nrows() {
                        return Err(Error::invalid("output direction has the wrong dimension"));
                    }
                    PlantedAxis::new(planted_s.transpose() * b, *s)
                })
                .collect()
        };
        let spec = Self {
            bias_axes: lift(bias_outputs)?,
            feature_axes: lift(feature_outputs)?,
            planted_s,
            noise_scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn key_dim(&self) -> usize {
        self.planted_s.ncols()
    }

    pub fn value_dim(&self) -> usize {
        self.planted_s.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.planted_s.shape();
        if m < n {
            return Err(Error::invalid(format!(
                "key dimension m = {m} must be at least value dimension n = {n}"
            )));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::invalid("noise_scale must be finite and >= 0"));
        }
        if self.bias_axes.is_empty() || self.feature_axes.is_empty() {
            return Err(Error::invalid(
                "layer data needs at least one bias and one feature axis",
            ));
        }
        if self
            .bias_axes
            .iter()
            .chain(&self.feature_axes)
            .any(|a| a.direction.len() != m)
        {
            return Err(Error::invalid(format!(
                "concept axes must live in key space R^{m}"
            )));
        }
        Ok(())
    }

    fn mixing(&self) -> Matrix {
        let axes: Vec<&PlantedAxis> = self.bias_axes.iter().chain(&self.feature_axes).collect();
        Matrix::from_fn(self.key_dim(), axes.len(), |i, j| {
            axes[j].strength * axes[j].direction[i]
        })
    }

    /// Population covariance of `(U, Zb, Zf, ε)`; the noise block is left
    /// out when `noise_scale == 0`.
    fn population_covariance(&self) -> Matrix {
        let a = self.mixing();
        let m = self.key_dim();
        let k = a.ncols();
        let e = if self.noise_scale > 0.0 {
            self.value_dim()
        } else {
            0
        };
        let mut c = Matrix::identity(m + k + e, m + k + e);
        let uu = &a * a.transpose() + Matrix::identity(m, m);
        c.view_mut((0, 0), (m, m)).copy_from(&uu);
        c.view_mut((0, m), (m, k)).copy_from(&a);
        c.view_mut((m, 0), (k, m)).copy_from(&a.transpose());
        if e > 0 {
            let noise = Matrix::identity(e, e) * self.noise_scale.powi(2);
            c.view_mut((m + k, m + k), (e, e)).copy_from(&noise);
        }
        c
    }
}

#[derive(Clone, Debug)]
pub struct LayerData {
    pub u: SampleBatch,
    pub v: SampleBatch,
    pub zb: SampleBatch,
    pub zf: SampleBatch,
}

/// Draw paired keys, values and concept labels. With `exact`, the joint
/// `(U, Zb, Zf, ε)` sample covariance equals the population covariance, so
/// in particular the noise is exactly uncorrelated with the keys.
pub fn gen_linear_layer_data(
    spec: &LayerDataSpec,
    n_samples: usize,
    seed: u64,
    exact: bool,
) -> Result<LayerData> {
    spec.validate()?;
    let m = spec.key_dim();
    let n = spec.value_dim();
    let (kb, kf) = (spec.bias_axes.len(), spec.feature_axes.len());
    let k = kb + kf;
    if n_samples < m + k + n + 2 {
        return Err(Error::invalid(format!(
            "need at least {} samples, got {n_samples}",
            m + k + n + 2
        )));
    }
    let mut rng = stream_rng(seed, 2);
    let z = Matrix::from_fn(n_samples, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let base = Matrix::from_fn(n_samples, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let eps = Matrix::from_fn(n_samples, n, |_, _| rng.sample::<f64, _>(StandardNormal))
        * spec.noise_scale;
    let u = base + &z * spec.mixing().transpose();

    let e = if spec.noise_scale > 0.0 { n } else { 0 };
    let mut joint = Matrix::zeros(n_samples, m + k + e);
    joint.columns_mut(0, m).copy_from(&u);
    joint.columns_mut(m, k).copy_from(&z);
    if e > 0 {
        joint.columns_mut(m + k, e).copy_from(&eps);
    }
    if exact {
        match_covariance(&mut joint, &spec.population_covariance())?;
    }
    let u = joint.columns(0, m).into_owned();
    let mut v = &u * spec.planted_s.transpose();
    if e > 0 {
        v -= joint.columns(m + k, e);
    }
    Ok(LayerData {
        u: SampleBatch::new(Role::U, u)?,
        v: SampleBatch::new(Role::V, v)?,
        zb: SampleBatch::new(Role::Zb, joint.columns(m, kb).into_owned())?,
        zf: SampleBatch::new(Role::Zf, joint.columns(m + kb, kf).into_owned())?,
    })
}
