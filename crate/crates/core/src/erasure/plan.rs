use std::fmt;

use rayon::prelude::*;

use super::{dama_edit, EditInputs, EditMode, ErasureSpec};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RankTolerance};
use crate::stats::SampleBatch;

/// Contiguous block of layer indices (0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerRange {
    pub start: usize,
    pub len: usize,
}

impl LayerRange {
    /// Last index in the range (inclusive).
    pub fn last(&self) -> usize {
        self.start + self.len - 1
    }

    pub fn contains(&self, layer: usize) -> bool {
        layer >= self.start && layer < self.start + self.len
    }

    pub fn iter(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.last())
    }
}

/// Edit `edit_count` layers starting two-thirds of the way up the stack.
pub fn plan_layers(total_layers: usize, edit_count: usize) -> Result<LayerRange> {
    if edit_count == 0 {
        return Err(Error::invalid("edit_count must be at least 1"));
    }
    let start = 2 * total_layers / 3;
    if start + edit_count > total_layers {
        return Err(Error::invalid(format!(
            "editing {edit_count} layers from layer {start} exceeds model depth {total_layers}"
        )));
    }
    Ok(LayerRange {
        start,
        len: edit_count,
    })
}

/// Keys (and, for refit mode, values) extracted at one planned layer.
pub struct LayerEditData {
    pub keys: SampleBatch,
    pub values: Option<SampleBatch>,
}

#[derive(Clone, Debug)]
pub struct PlannedLayer {
    pub index: usize,
    pub spec: ErasureSpec,
    pub weight: Matrix,
}

#[derive(Clone, Debug)]
pub struct EditPlan {
    pub range: LayerRange,
    pub layers: Vec<PlannedLayer>,
}

/// Compute the edit for every layer in `range` independently. `weights` is
/// indexed by layer over the whole model; `data` by position in `range`.
#[allow(clippy::too_many_arguments)]
pub fn build_edit_plan(
    weights: &[Matrix],
    range: LayerRange,
    data: &[LayerEditData],
    zb: &SampleBatch,
    zf: Option<&SampleBatch>,
    t: f64,
    mode: EditMode,
    tol: RankTolerance,
) -> Result<EditPlan> {
    if range.start + range.len > weights.len() {
        return Err(Error::invalid(format!(
            "layer range {range} exceeds model depth {}",
            weights.len()
        )));
    }
    if data.len() != range.len {
        return Err(Error::invalid(format!(
            "got edit data for {} layers, range {range} has {}",
            data.len(),
            range.len
        )));
    }
    let layers = range
        .iter()
        .zip(data)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(index, d)| {
            let inputs = EditInputs {
                weight: Some(&weights[index]),
                keys: &d.keys,
                zb,
                zf,
                values: d.values.as_ref(),
            };
            let edited = dama_edit(&inputs, t, mode, tol)?;
            if edited.weight.shape() != weights[index].shape() {
                return Err(Error::invalid(format!(
                    "layer {index}: edited weight shape {:?} differs from original {:?}",
                    edited.weight.shape(),
                    weights[index].shape()
                )));
            }
            Ok(PlannedLayer {
                index,
                spec: edited.spec,
                weight: edited.weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EditPlan { range, layers })
}
