use super::{DualDirection, ErasureSpec};
use crate::error::{Error, Result};
use crate::numerics::{svd, sym_eigen, whitening_pair, Matrix, RankTolerance};
use crate::stats::{CovarianceBundle, Role};

/// Singular values closer than this (relative to the largest) are treated
/// as one degenerate cluster when attributing variance.
const CLUSTER_GAP: f64 = 1e-8;

fn check_cross(sigma_xx: &Matrix, cross: &Matrix, what: &str) -> Result<()> {
    if !sigma_xx.is_square() {
        return Err(Error::invalid(format!(
            "covariance must be square, got {}x{}",
            sigma_xx.nrows(),
            sigma_xx.ncols()
        )));
    }
    if cross.nrows() != sigma_xx.nrows() || cross.ncols() == 0 {
        return Err(Error::invalid(format!(
            "{what} is {}x{}, expected {} rows",
            cross.nrows(),
            cross.ncols(),
            sigma_xx.nrows()
        )));
    }
    Ok(())
}

/// Least-squares concept erasure for a single concept: every direction of
/// the whitened cross-covariance is erased.
pub fn leace_projector(
    sigma_xx: &Matrix,
    sigma_xz: &Matrix,
    tol: RankTolerance,
) -> Result<ErasureSpec> {
    leace_with_floor(sigma_xx, sigma_xz, tol, 0.0)
}

/// [`leace_projector`] for the bias concept of a bundle (roles X, Zb).
/// Whitened amplitudes at or below `tol * sqrt(λ_max(Σ_ZbZb))` count as
/// zero, so a concept uncorrelated with X up to rounding erases nothing.
pub fn leace_projector_from_bundle(
    bundle: &CovarianceBundle,
    tol: RankTolerance,
) -> Result<ErasureSpec> {
    let floor = concept_floor(bundle, tol)?;
    leace_with_floor(&bundle.sigma_xx()?, &bundle.sigma_xzb()?, tol, floor)
}

pub(crate) fn leace_with_floor(
    sigma_xx: &Matrix,
    sigma_xz: &Matrix,
    tol: RankTolerance,
    floor: f64,
) -> Result<ErasureSpec> {
    check_cross(sigma_xx, sigma_xz, "cross-covariance")?;
    let (root, white) = whitening_pair(sigma_xx, tol)?;
    let bias = &white * sigma_xz;
    let directions = attribute(None, &bias, tol, floor)?;
    let erased = (0..directions.len()).collect();
    Ok(assemble(root, white, directions, erased, 0.0))
}

/// Absolute amplitude floor `tol * sqrt(λ_max)` over the concept
/// covariances present in `bundle`. Whitened cross-covariance amplitudes
/// never exceed the concept's standard deviation.
pub(crate) fn concept_floor(bundle: &CovarianceBundle, tol: RankTolerance) -> Result<f64> {
    let mut top: f64 = 0.0;
    for role in [Role::Zb, Role::Zf] {
        if bundle.has(role) {
            let values = sym_eigen(&bundle.cov(role, role)?)?.values;
            top = top.max(values.iter().copied().fold(0.0, f64::max));
        }
    }
    Ok(tol.value() * top.sqrt())
}

/// Directions of `W [Σ_XZf | Σ_XZb]` with per-concept variance attribution.
pub fn dual_directions(
    sigma_xx: &Matrix,
    sigma_xzf: &Matrix,
    sigma_xzb: &Matrix,
    tol: RankTolerance,
) -> Result<Vec<DualDirection>> {
    check_cross(sigma_xx, sigma_xzf, "feature cross-covariance")?;
    check_cross(sigma_xx, sigma_xzb, "bias cross-covariance")?;
    let white = whitening_pair(sigma_xx, tol)?.1;
    attribute(Some(&(&white * sigma_xzf)), &(&white * sigma_xzb), tol, 0.0)
}

/// Indices of directions to erase. A direction is preserved iff
/// `var_bias <= t * var_feature`; directions carrying no variance for
/// either concept are neither preserved nor erased.
pub fn select_erased(directions: &[DualDirection], t: f64) -> Result<Vec<usize>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!(
            "threshold t must be finite and >= 0, got {t}"
        )));
    }
    Ok(directions
        .iter()
        .enumerate()
        .filter(|(_, d)| !(d.var_bias == 0.0 && d.var_feature == 0.0))
        .filter(|(_, d)| d.var_bias > t * d.var_feature)
        .map(|(i, _)| i)
        .collect())
}

/// Dual-debiasing projector from an erasure-view bundle (roles X, Zb, Zf),
/// with the amplitude floor of [`leace_projector_from_bundle`].
pub fn dual_projector(
    bundle: &CovarianceBundle,
    t: f64,
    tol: RankTolerance,
) -> Result<ErasureSpec> {
    let floor = concept_floor(bundle, tol)?;
    dual_with_floor(
        &bundle.sigma_xx()?,
        &bundle.sigma_xzf()?,
        &bundle.sigma_xzb()?,
        t,
        tol,
        floor,
    )
}

pub fn dual_projector_from_cov(
    sigma_xx: &Matrix,
    sigma_xzf: &Matrix,
    sigma_xzb: &Matrix,
    t: f64,
    tol: RankTolerance,
) -> Result<ErasureSpec> {
    dual_with_floor(sigma_xx, sigma_xzf, sigma_xzb, t, tol, 0.0)
}

pub(crate) fn dual_with_floor(
    sigma_xx: &Matrix,
    sigma_xzf: &Matrix,
    sigma_xzb: &Matrix,
    t: f64,
    tol: RankTolerance,
    floor: f64,
) -> Result<ErasureSpec> {
    check_cross(sigma_xx, sigma_xzf, "feature cross-covariance")?;
    check_cross(sigma_xx, sigma_xzb, "bias cross-covariance")?;
    let (root, white) = whitening_pair(sigma_xx, tol)?;
    let feature = &white * sigma_xzf;
    let bias = &white * sigma_xzb;
    let directions = attribute(Some(&feature), &bias, tol, floor)?;
    let erased = select_erased(&directions, t)?;
    Ok(assemble(root, white, directions, erased, t))
}

fn assemble(
    root: Matrix,
    white: Matrix,
    directions: Vec<DualDirection>,
    erased: Vec<usize>,
    threshold: f64,
) -> ErasureSpec {
    let n = root.nrows();
    let mut spec = ErasureSpec {
        whitening: white,
        unwhitening: root,
        directions,
        erased,
        threshold,
        projector: Matrix::identity(n, n),
    };
    if !spec.erased.is_empty() {
        let sub = spec.erased_subspace();
        spec.projector -= &spec.unwhitening * sub * &spec.whitening;
    }
    spec
}

/// SVD of the whitened joint cross-covariance `[feature | bias]`, keeping
/// directions above both the relative rank cutoff and the absolute `floor`. Inside clusters of equal singular
/// values the basis is rotated to diagonalise the bias share, so the split
/// does not depend on the SVD's arbitrary choice within the cluster.
fn attribute(
    feature: Option<&Matrix>,
    bias: &Matrix,
    tol: RankTolerance,
    floor: f64,
) -> Result<Vec<DualDirection>> {
    let n = bias.nrows();
    let kf = feature.map_or(0, |f| f.ncols());
    let mut joint = Matrix::zeros(n, kf + bias.ncols());
    if let Some(f) = feature {
        joint.columns_mut(0, kf).copy_from(f);
    }
    joint.columns_mut(kf, bias.ncols()).copy_from(bias);

    let d = svd(&joint)?;
    let sigma_max = d.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = tol.cutoff(sigma_max).max(floor);
    let rank = d.singular_values.iter().filter(|&&s| s > cut).count();
    if rank == 0 {
        return Ok(Vec::new());
    }
    let mut axes = d.u.columns(0, rank).into_owned();

    let mut start = 0;
    while start < rank {
        let mut end = start + 1;
        while end < rank
            && d.singular_values[end - 1] - d.singular_values[end] <= CLUSTER_GAP * sigma_max
        {
            end += 1;
        }
        if end - start > 1 {
            let block = axes.columns(start, end - start).into_owned();
            let proj = block.transpose() * bias;
            let gram = &proj * proj.transpose();
            let eig = sym_eigen(&gram)?;
            for k in 0..eig.values.len() {
                let v = &block * eig.vectors.column(k);
                axes.set_column(start + k, &v);
            }
        }
        start = end;
    }

    let share = |m: Option<&Matrix>, axis: &nalgebra::DVector<f64>| -> f64 {
        match m {
            None => 0.0,
            Some(m) => {
                let amp = (m.transpose() * axis).norm();
                if amp <= cut {
                    0.0
                } else {
                    amp * amp
                }
            }
        }
    };
    Ok(axes
        .column_iter()
        .map(|c| {
            let axis = c.into_owned();
            DualDirection {
                var_feature: share(feature, &axis),
                var_bias: share(Some(bias), &axis),
                axis,
            }
        })
        .collect())
}
