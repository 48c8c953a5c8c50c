use crate::erasure::ols_fit;
use crate::error::{Error, Result};
use crate::numerics::{svd, Matrix, RankTolerance};
use crate::stats::{estimate, Role, SampleBatch};

/// One evaluated word: annotated stereotype and factual scores plus the
/// observed score `y = p(male token) - p(female token)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfessionRecord {
    pub id: String,
    pub x_s: f64,
    pub x_f: f64,
    pub y: f64,
}

impl ProfessionRecord {
    pub fn new(id: impl Into<String>, x_s: f64, x_f: f64, y: f64) -> Result<Self> {
        let id = id.into();
        for (name, v) in [("x_s", x_s), ("x_f", x_f), ("y", y)] {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "record '{id}': {name} = {v} outside [-1, 1]"
                )));
            }
        }
        Ok(Self { id, x_s, x_f, y })
    }
}

/// Coefficients of `y = a_s x_s + a_f x_f + b0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasFit {
    pub a_s: f64,
    pub a_f: f64,
    pub b0: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Ordinary least squares over `(x_s, x_f, 1) -> y`.
pub fn fit_bias_model(records: &[ProfessionRecord]) -> Result<BiasFit> {
    let n = records.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "bias fit needs at least 3 records, have {n}"
        )));
    }
    let xs = Matrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            records[i].x_s
        } else {
            records[i].x_f
        }
    });
    let ys = Matrix::from_fn(n, 1, |i, _| records[i].y);

    let names = ["x_s", "x_f"];
    for (j, name) in names.iter().enumerate() {
        let col = xs.column(j);
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::RankDeficient(format!(
                "{name} is constant across records; intercept and {name} are collinear"
            )));
        }
    }
    let tol = RankTolerance::default();
    let bundle = estimate(&[
        &SampleBatch::new(Role::U, xs)?,
        &SampleBatch::new(Role::V, ys.clone())?,
    ])?;
    let sigma_uu = bundle.sigma_uu()?;
    if svd(&sigma_uu)?.rank(tol) < 2 {
        return Err(Error::RankDeficient(
            "x_s and x_f are collinear across records".into(),
        ));
    }
    let coef = ols_fit(&sigma_uu, &bundle.sigma_uv()?, tol)?;
    let (a_s, a_f) = (coef[(0, 0)], coef[(0, 1)]);
    let mu = bundle.mean(Role::U)?;
    let y_mean = bundle.mean(Role::V)?[0];
    let b0 = y_mean - a_s * mu[0] - a_f * mu[1];

    let (mut ssr, mut sst) = (0.0, 0.0);
    for r in records {
        let pred = a_s * r.x_s + a_f * r.x_f + b0;
        ssr += (r.y - pred).powi(2);
        sst += (r.y - y_mean).powi(2);
    }
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(BiasFit {
        a_s,
        a_f,
        b0,
        r_squared,
        n,
    })
}
