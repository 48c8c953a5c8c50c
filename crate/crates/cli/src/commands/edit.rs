use std::path::Path;

use dualdebias::erasure::{dama_edit_from_bundle, plan_layers, EditMode};
use dualdebias::format::{read_matrix, write_matrix};
use dualdebias::stats::Role;
use dualdebias::{Error, Result};
use serde::Serialize;

use super::prepare_out;
use crate::config::{required, RunConfig};
use crate::store::{read_bundle, write_toml};

#[derive(Serialize)]
struct EditManifest {
    total_layers: usize,
    edit_count: usize,
    mode: String,
    threshold_t: f64,
    layers: Vec<usize>,
    layer: Vec<LayerEntry>,
}

#[derive(Serialize)]
struct LayerEntry {
    index: usize,
    directions: usize,
    erased: usize,
    changed: bool,
}

fn weight_path(dir: &Path, layer: usize) -> std::path::PathBuf {
    dir.join(format!("layer_{layer}.ddm"))
}

/// Number of consecutive `layer_<i>.ddm` files from `i = 0`.
fn count_layers(dir: &Path) -> usize {
    (0..).take_while(|&i| weight_path(dir, i).is_file()).count()
}

pub fn run(config: &RunConfig) -> Result<()> {
    let c = &config.edit;
    let weights = required(&c.weights, "edit.weights")?;
    let bundles = required(&c.bundles, "edit.bundles")?;
    let total = c.num_layers.unwrap_or_else(|| count_layers(weights));
    let range = plan_layers(total, c.edit_count)?;
    let mode: EditMode = c.mode.parse()?;
    let tol = config.tolerance()?;

    let mut edited = Vec::with_capacity(range.len);
    for layer in range.iter() {
        let w = read_matrix(weight_path(weights, layer))?;
        let bundle = read_bundle(&bundles.join(format!("layer_{layer}")))?;
        match bundle.dim(Role::U) {
            Some(m) if m == w.ncols() => {}
            Some(m) => {
                return Err(Error::invalid(format!(
                    "layer {layer}: weight is {}x{}, keys have dimension {m}",
                    w.nrows(),
                    w.ncols()
                )))
            }
            None => {
                return Err(Error::invalid(format!(
                    "layer {layer}: bundle has no 'u' component"
                )))
            }
        }
        let e = dama_edit_from_bundle(Some(&w), &bundle, config.threshold_t, mode, tol)?;
        let entry = LayerEntry {
            index: layer,
            directions: e.spec.directions.len(),
            erased: e.spec.erased.len(),
            changed: e.weight != w,
        };
        edited.push((entry, e.weight));
    }

    let out = prepare_out(config, &c.out, "edit.out")?;
    let mut entries = Vec::with_capacity(edited.len());
    for (entry, weight) in edited {
        write_matrix(weight_path(&out, entry.index), &weight)?;
        println!(
            "layer {} erased {} of {} directions",
            entry.index, entry.erased, entry.directions
        );
        entries.push(entry);
    }
    let manifest = EditManifest {
        total_layers: total,
        edit_count: c.edit_count,
        mode: mode.to_string(),
        threshold_t: config.threshold_t,
        layers: range.iter().collect(),
        layer: entries,
    };
    write_toml(&out.join("edit_manifest.toml"), &manifest)?;
    println!("edited layers {range}");
    Ok(())
}
