use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, pinv, Matrix, RankTolerance};

/// Least-squares regression matrix `S = Σ_UVᵀ Σ_UU⁺` (shape `n x m`) from
/// key covariance `Σ_UU` (`m x m`) and key/value cross-covariance `Σ_UV`
/// (`m x n`).
pub fn ols_fit(sigma_uu: &Matrix, sigma_uv: &Matrix, tol: RankTolerance) -> Result<Matrix> {
    ensure_finite(sigma_uu, "key covariance")?;
    ensure_finite(sigma_uv, "key/value cross-covariance")?;
    if !sigma_uu.is_square() || sigma_uv.nrows() != sigma_uu.nrows() {
        return Err(Error::invalid(format!(
            "shape mismatch: key covariance {}x{}, cross-covariance {}x{}",
            sigma_uu.nrows(),
            sigma_uu.ncols(),
            sigma_uv.nrows(),
            sigma_uv.ncols()
        )));
    }
    Ok(sigma_uv.transpose() * pinv(sigma_uu, tol)?)
}
