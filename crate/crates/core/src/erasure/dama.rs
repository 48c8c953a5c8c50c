use std::fmt;
use std::str::FromStr;

use super::leace::{concept_floor, dual_with_floor, leace_with_floor};
use super::{ols_fit, ErasureSpec};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RankTolerance};
use crate::stats::{estimate, CovarianceBundle, Role, SampleBatch};

/// Where the regression matrix of the layer comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EditMode {
    /// Treat the existing layer weight as the least-squares estimator.
    #[default]
    InPlace,
    /// Re-estimate the regression from paired keys and values first.
    Refit,
}

impl fmt::Display for EditMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditMode::InPlace => "inplace",
            EditMode::Refit => "refit",
        })
    }
}

impl FromStr for EditMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inplace" => Ok(EditMode::InPlace),
            "refit" => Ok(EditMode::Refit),
            other => Err(Error::invalid(format!(
                "unknown edit mode '{other}' (inplace|refit)"
            ))),
        }
    }
}

/// Row-paired data for editing one layer. `zf` is optional: without it the
/// edit is plain single-concept erasure of `zb`.
pub struct EditInputs<'a> {
    pub weight: Option<&'a Matrix>,
    pub keys: &'a SampleBatch,
    pub zb: &'a SampleBatch,
    pub zf: Option<&'a SampleBatch>,
    pub values: Option<&'a SampleBatch>,
}

#[derive(Clone, Debug)]
pub struct EditedLayer {
    pub weight: Matrix,
    /// Regression matrix the projector was applied to.
    pub regression: Matrix,
    pub spec: ErasureSpec,
}

fn expect_role(b: &SampleBatch, role: Role) -> Result<()> {
    if b.role() == role {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "expected a {role} batch, got {}",
            b.role()
        )))
    }
}

pub fn dama_edit(
    inputs: &EditInputs<'_>,
    t: f64,
    mode: EditMode,
    tol: RankTolerance,
) -> Result<EditedLayer> {
    expect_role(inputs.keys, Role::U)?;
    expect_role(inputs.zb, Role::Zb)?;
    let mut batches = vec![inputs.keys, inputs.zb];
    if let Some(zf) = inputs.zf {
        expect_role(zf, Role::Zf)?;
        batches.push(zf);
    }
    match (mode, inputs.values) {
        (EditMode::Refit, Some(v)) => {
            expect_role(v, Role::V)?;
            batches.push(v);
        }
        (EditMode::Refit, None) => {
            return Err(Error::invalid("refit mode needs value vectors"));
        }
        (EditMode::InPlace, _) => {}
    }
    let bundle = estimate(&batches)?;
    dama_edit_from_bundle(inputs.weight, &bundle, t, mode, tol)
}

/// Edit from precomputed key statistics. The bundle must hold roles `U` and
/// `Zb`, optionally `Zf`, and `V` in refit mode.
pub fn dama_edit_from_bundle(
    weight: Option<&Matrix>,
    bundle: &CovarianceBundle,
    t: f64,
    mode: EditMode,
    tol: RankTolerance,
) -> Result<EditedLayer> {
    let sigma_uu = bundle.sigma_uu()?;
    let m = sigma_uu.nrows();
    let s = match mode {
        EditMode::InPlace => weight
            .ok_or_else(|| Error::invalid("inplace mode needs the layer weight"))?
            .clone(),
        EditMode::Refit => {
            let s = ols_fit(&sigma_uu, &bundle.sigma_uv()?, tol)?;
            if let Some(w) = weight {
                if w.shape() != s.shape() {
                    return Err(Error::invalid(format!(
                        "layer weight is {}x{}, refit regression is {}x{}",
                        w.nrows(),
                        w.ncols(),
                        s.nrows(),
                        s.ncols()
                    )));
                }
            }
            s
        }
    };
    if s.ncols() != m {
        return Err(Error::invalid(format!(
            "layer weight has {} input columns, keys have dimension {m}",
            s.ncols()
        )));
    }
    if m < s.nrows() {
        return Err(Error::invalid(format!(
            "key dimension {m} is smaller than output dimension {}",
            s.nrows()
        )));
    }

    let floor = concept_floor(bundle, tol)?;
    let out = &s * &sigma_uu * s.transpose();
    let sigma_vv = (&out + out.transpose()) * 0.5;
    let sigma_vzb = &s * bundle.cov(Role::U, Role::Zb)?;
    let spec = if bundle.has(Role::Zf) {
        let sigma_vzf = &s * bundle.cov(Role::U, Role::Zf)?;
        dual_with_floor(&sigma_vv, &sigma_vzf, &sigma_vzb, t, tol, floor)?
    } else {
        leace_with_floor(&sigma_vv, &sigma_vzb, tol, floor)?
    };
    let edited = if spec.erased.is_empty() {
        s.clone()
    } else {
        &spec.projector * &s
    };
    Ok(EditedLayer {
        weight: edited,
        regression: s,
        spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(role: Role, rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> SampleBatch {
        SampleBatch::new(role, Matrix::from_fn(rows, cols, f)).unwrap()
    }

    #[test]
    fn refit_without_values_fails() {
        let u = batch(Role::U, 5, 2, |i, j| (i * 2 + j) as f64);
        let zb = batch(Role::Zb, 5, 1, |i, _| i as f64);
        let inputs = EditInputs {
            weight: None,
            keys: &u,
            zb: &zb,
            zf: None,
            values: None,
        };
        assert!(dama_edit(&inputs, 0.0, EditMode::Refit, RankTolerance::default()).is_err());
        assert!(dama_edit(&inputs, 0.0, EditMode::InPlace, RankTolerance::default()).is_err());
    }

    #[test]
    fn narrow_keys_are_rejected() {
        let u = batch(Role::U, 6, 2, |i, j| ((i + 1) * (j + 2)) as f64 % 5.0);
        let zb = batch(Role::Zb, 6, 1, |i, _| (i % 2) as f64);
        let w = Matrix::from_element(3, 2, 1.0);
        let inputs = EditInputs {
            weight: Some(&w),
            keys: &u,
            zb: &zb,
            zf: None,
            values: None,
        };
        let err = dama_edit(&inputs, 0.0, EditMode::InPlace, RankTolerance::default()).unwrap_err();
        assert!(err.to_string().contains("smaller than output"), "{err}");
    }

    #[test]
    fn uncorrelated_concept_leaves_weight_unchanged() {
        // zb constant -> zero cross-covariance
        let u = batch(Role::U, 8, 3, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let zb = batch(Role::Zb, 8, 1, |_, _| 1.0);
        let w = Matrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64 * 0.3);
        let inputs = EditInputs {
            weight: Some(&w),
            keys: &u,
            zb: &zb,
            zf: None,
            values: None,
        };
        let e = dama_edit(&inputs, 0.0, EditMode::InPlace, RankTolerance::default()).unwrap();
        assert_eq!(e.weight, w);
    }

    #[test]
    fn wrong_role_is_rejected() {
        let u = batch(Role::X, 4, 2, |i, j| (i + j) as f64);
        let zb = batch(Role::Zb, 4, 1, |i, _| i as f64);
        let w = Matrix::identity(2, 2);
        let inputs = EditInputs {
            weight: Some(&w),
            keys: &u,
            zb: &zb,
            zf: None,
            values: None,
        };
        assert!(dama_edit(&inputs, 0.0, EditMode::InPlace, RankTolerance::default()).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("refit".parse::<EditMode>().unwrap(), EditMode::Refit);
        assert_eq!(EditMode::default().to_string(), "inplace");
        assert!("both".parse::<EditMode>().is_err());
    }
}
