//! On-disk layouts. Every artifact is a directory of MatrixFiles plus one
//! TOML manifest; vectors are stored as one-column matrices.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dualdebias::erasure::{DualDirection, ErasureSpec};
use dualdebias::format::{read_matrix, write_matrix};
use dualdebias::stats::{CovarianceBundle, Role};
use dualdebias::synthlab::{FeedForward, ToyLM, Vocab};
use dualdebias::{Error, Matrix, Result};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value)
        .map_err(|e| Error::Numerical(format!("serializing {}: {e}", path.display())))?;
    write_text(path, &text)
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text)
        .map_err(|e| Error::invalid(format!("{}: {}", path.display(), e.message())))
}

fn column(v: &DVector<f64>) -> Matrix {
    Matrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn read_column(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(Error::invalid(format!(
            "{}: expected a single column",
            path.display()
        )));
    }
    Ok(m.column(0).into_owned())
}

pub const BUNDLE_MANIFEST: &str = "manifest.toml";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleManifest {
    count: u64,
    roles: Vec<RoleEntry>,
    blocks: Vec<BlockEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleEntry {
    role: String,
    dim: usize,
    mean: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    a: String,
    b: String,
    file: String,
}

pub fn write_bundle(dir: &Path, bundle: &CovarianceBundle) -> Result<()> {
    ensure_dir(dir)?;
    let mut roles = Vec::new();
    for &(role, dim) in bundle.registration() {
        let file = format!("mean_{role}.ddm");
        write_matrix(dir.join(&file), &column(bundle.mean(role)?))?;
        roles.push(RoleEntry {
            role: role.to_string(),
            dim,
            mean: file,
        });
    }
    let mut blocks = Vec::new();
    for ((a, b), m) in bundle.blocks() {
        let file = format!("cov_{a}_{b}.ddm");
        write_matrix(dir.join(&file), m)?;
        blocks.push(BlockEntry {
            a: a.to_string(),
            b: b.to_string(),
            file,
        });
    }
    let manifest = BundleManifest {
        count: bundle.count(),
        roles,
        blocks,
    };
    write_toml(&dir.join(BUNDLE_MANIFEST), &manifest)
}

pub fn read_bundle(dir: &Path) -> Result<CovarianceBundle> {
    let manifest: BundleManifest = read_toml(&dir.join(BUNDLE_MANIFEST))?;
    let mut registration = Vec::new();
    let mut means = BTreeMap::new();
    for r in &manifest.roles {
        let role: Role = r.role.parse()?;
        registration.push((role, r.dim));
        means.insert(role, read_column(&dir.join(&r.mean))?);
    }
    let mut blocks = BTreeMap::new();
    for b in &manifest.blocks {
        blocks.insert(
            (b.a.parse()?, b.b.parse()?),
            read_matrix(dir.join(&b.file))?,
        );
    }
    CovarianceBundle::from_parts(manifest.count, registration, means, blocks)
        .map_err(|e| Error::invalid(format!("{}: {e}", dir.display())))
}

pub const PLAN_MANIFEST: &str = "plan.toml";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanManifest {
    threshold_t: f64,
    dim: usize,
    erased: Vec<usize>,
    var_bias: Vec<f64>,
    var_feature: Vec<f64>,
}

/// Projector, whitening pair, direction axes (one column each) and the
/// direction table.
pub fn write_plan(dir: &Path, spec: &ErasureSpec) -> Result<()> {
    ensure_dir(dir)?;
    let n = spec.dim();
    write_matrix(dir.join("projector.ddm"), &spec.projector)?;
    write_matrix(dir.join("whitening.ddm"), &spec.whitening)?;
    write_matrix(dir.join("unwhitening.ddm"), &spec.unwhitening)?;
    let axes = Matrix::from_fn(n, spec.directions.len(), |i, j| spec.directions[j].axis[i]);
    write_matrix(dir.join("axes.ddm"), &axes)?;
    let mut table = String::from("direction,var_bias,var_feature,ratio,erased\n");
    for (i, d) in spec.directions.iter().enumerate() {
        table.push_str(&format!(
            "{i},{:?},{:?},{:?},{}\n",
            d.var_bias,
            d.var_feature,
            d.ratio(),
            spec.erased.contains(&i)
        ));
    }
    write_text(&dir.join("directions.csv"), &table)?;
    let erased: String = spec.erased.iter().map(|i| format!("{i}\n")).collect();
    write_text(&dir.join("erased.txt"), &erased)?;
    let manifest = PlanManifest {
        threshold_t: spec.threshold,
        dim: n,
        erased: spec.erased.clone(),
        var_bias: spec.directions.iter().map(|d| d.var_bias).collect(),
        var_feature: spec.directions.iter().map(|d| d.var_feature).collect(),
    };
    write_toml(&dir.join(PLAN_MANIFEST), &manifest)
}

pub fn read_plan(dir: &Path) -> Result<ErasureSpec> {
    let m: PlanManifest = read_toml(&dir.join(PLAN_MANIFEST))?;
    let axes = read_matrix(dir.join("axes.ddm"))?;
    let k = m.var_bias.len();
    if axes.shape() != (m.dim, k) || m.var_feature.len() != k || m.erased.iter().any(|&i| i >= k) {
        return Err(Error::invalid(format!(
            "{}: inconsistent plan files",
            dir.display()
        )));
    }
    let directions = (0..k)
        .map(|j| DualDirection {
            axis: axes.column(j).into_owned(),
            var_bias: m.var_bias[j],
            var_feature: m.var_feature[j],
        })
        .collect();
    Ok(ErasureSpec {
        whitening: read_matrix(dir.join("whitening.ddm"))?,
        unwhitening: read_matrix(dir.join("unwhitening.ddm"))?,
        directions,
        erased: m.erased,
        threshold: m.threshold_t,
        projector: read_matrix(dir.join("projector.ddm"))?,
    })
}

pub const MODEL_MANIFEST: &str = "model.toml";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    num_layers: usize,
    residual: bool,
    words: Vec<String>,
}

fn layer_file(dir: &Path, layer: usize, part: &str) -> PathBuf {
    dir.join(format!("layer_{layer}_{part}.ddm"))
}

pub fn write_model(dir: &Path, model: &ToyLM, vocab: &Vocab) -> Result<()> {
    ensure_dir(dir)?;
    write_matrix(dir.join("embed.ddm"), &model.embed)?;
    write_matrix(dir.join("unembed.ddm"), &model.unembed)?;
    write_matrix(dir.join("unembed_bias.ddm"), &column(&model.unembed_bias))?;
    for (i, b) in model.layers.iter().enumerate() {
        write_matrix(layer_file(dir, i, "up"), &b.up)?;
        write_matrix(layer_file(dir, i, "up_bias"), &column(&b.up_bias))?;
        write_matrix(layer_file(dir, i, "down"), &b.down)?;
        write_matrix(layer_file(dir, i, "down_bias"), &column(&b.down_bias))?;
    }
    let manifest = ModelManifest {
        vocab_size: model.vocab_size(),
        embed_dim: model.embed_dim(),
        hidden_dim: model.hidden_dim(),
        num_layers: model.num_layers(),
        residual: model.residual,
        words: vocab.words().to_vec(),
    };
    write_toml(&dir.join(MODEL_MANIFEST), &manifest)
}

/// The model and its vocabulary words in id order.
pub fn read_model(dir: &Path) -> Result<(ToyLM, Vec<String>)> {
    let m: ModelManifest = read_toml(&dir.join(MODEL_MANIFEST))?;
    let layers = (0..m.num_layers)
        .map(|i| {
            Ok(FeedForward {
                up: read_matrix(layer_file(dir, i, "up"))?,
                up_bias: read_column(&layer_file(dir, i, "up_bias"))?,
                down: read_matrix(layer_file(dir, i, "down"))?,
                down_bias: read_column(&layer_file(dir, i, "down_bias"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = ToyLM {
        embed: read_matrix(dir.join("embed.ddm"))?,
        layers,
        unembed: read_matrix(dir.join("unembed.ddm"))?,
        unembed_bias: read_column(&dir.join("unembed_bias.ddm"))?,
        residual: m.residual,
    };
    let shapes_ok = model.embed.shape() == (m.embed_dim, m.vocab_size)
        && model.unembed.shape() == (m.vocab_size, m.embed_dim)
        && model.unembed_bias.len() == m.vocab_size
        && m.words.len() == m.vocab_size
        && model.layers.iter().all(|b| {
            b.up.shape() == (m.hidden_dim, m.embed_dim)
                && b.up_bias.len() == m.hidden_dim
                && b.down.shape() == (m.embed_dim, m.hidden_dim)
                && b.down_bias.len() == m.embed_dim
        });
    if !shapes_ok || m.num_layers == 0 {
        return Err(Error::invalid(format!(
            "{}: model files disagree with {MODEL_MANIFEST}",
            dir.display()
        )));
    }
    Ok((model, m.words))
}
