//! Concept erasure and weight editing.
//!
//! * [`leace_projector`]: least-squares erasure of one concept from a
//!   representation (`P = I - W⁺ P_{WΣ} W`).
//! * [`dual_directions`] / [`select_erased`] / [`dual_projector`]: the dual
//!   variant that splits the whitened cross-covariance into directions,
//!   attributes each direction's variance to the bias and feature concepts,
//!   and only erases directions dominated by bias.
//! * [`ols_fit`] and [`dama_edit`]: the same projection lifted onto the
//!   weights of a linear layer.
//! * [`plan_layers`] / [`build_edit_plan`]: multi-layer scheduling.

mod dama;
mod leace;
mod ols;
mod plan;

pub use dama::{dama_edit, dama_edit_from_bundle, EditInputs, EditMode, EditedLayer};
pub use leace::{
    dual_directions, dual_projector, dual_projector_from_cov, leace_projector,
    leace_projector_from_bundle, select_erased,
};
pub use ols::ols_fit;
pub use plan::{build_edit_plan, plan_layers, EditPlan, LayerEditData, LayerRange, PlannedLayer};

use nalgebra::DVector;

use crate::numerics::Matrix;

/// One whitened direction of the joint concept cross-covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct DualDirection {
    /// Unit vector in whitened space.
    pub axis: DVector<f64>,
    pub var_bias: f64,
    pub var_feature: f64,
}

impl DualDirection {
    /// Bias-to-feature variance ratio (infinite for pure-bias directions).
    pub fn ratio(&self) -> f64 {
        if self.var_feature > 0.0 {
            self.var_bias / self.var_feature
        } else if self.var_bias > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// Result of planning an erasure: the whitening pair, the attributed
/// directions, which of them are erased, and the final projector.
#[derive(Clone, Debug, PartialEq)]
pub struct ErasureSpec {
    /// `W = (Σ^{1/2})⁺`.
    pub whitening: Matrix,
    /// `W⁺ = Σ^{1/2}`.
    pub unwhitening: Matrix,
    pub directions: Vec<DualDirection>,
    /// Indices into `directions`, ascending.
    pub erased: Vec<usize>,
    pub threshold: f64,
    /// `I - W⁺ P̃ W`.
    pub projector: Matrix,
}

impl ErasureSpec {
    pub fn dim(&self) -> usize {
        self.projector.nrows()
    }

    /// Orthogonal projector onto the span of the erased axes (whitened space).
    pub fn erased_subspace(&self) -> Matrix {
        let n = self.dim();
        let mut p = Matrix::zeros(n, n);
        for &i in &self.erased {
            let a = &self.directions[i].axis;
            p.ger(1.0, a, a, 1.0);
        }
        p
    }

    /// Apply the erasure to one observation around the recorded mean:
    /// `x - W⁺ P̃ W (x - mean)`.
    pub fn apply_centered(&self, x: &DVector<f64>, mean: &DVector<f64>) -> DVector<f64> {
        let centered = x - mean;
        let shifted = &self.projector * centered;
        shifted + mean
    }
}
