//! Run configuration: one TOML file with top-level run parameters and one
//! table per verb. Unknown keys are rejected at every level. `--set
//! key=value` overrides are applied to the parsed document before it is
//! checked, so they obey the same rules.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dualdebias::{Error, RankTolerance, Result};
use serde::{Deserialize, Serialize};

pub const RESOLVED_NAME: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Bias-to-feature ratio at or below which a direction is preserved.
    pub threshold_t: f64,
    pub rank_tol: f64,
    pub estimate: EstimateConfig,
    pub plan: PlanConfig,
    pub edit: EditConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub toylm: ToylmConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 47,
            threshold_t: 0.05,
            rank_tol: RankTolerance::default().value(),
            estimate: EstimateConfig::default(),
            plan: PlanConfig::default(),
            edit: EditConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
            toylm: ToylmConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// One file or an ordered list of shard files whose rows are concatenated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathList {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl PathList {
    pub fn paths(&self) -> &[PathBuf] {
        match self {
            PathList::One(p) => std::slice::from_ref(p),
            PathList::Many(v) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    /// Role name (`x`, `u`, `v`, `zb`, `zf`) to sample file(s).
    pub inputs: BTreeMap<String, PathList>,
    pub shards: usize,
    pub out: Option<PathBuf>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            inputs: BTreeMap::new(),
            shards: 1,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub bundle: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    /// Directory of `layer_<i>.ddm` weight files.
    pub weights: Option<PathBuf>,
    /// Directory of `layer_<i>/` bundles for the planned layers.
    pub bundles: Option<PathBuf>,
    /// Total layer count; inferred from the weight files when absent.
    pub num_layers: Option<usize>,
    pub edit_count: usize,
    /// `inplace` or `refit`.
    pub mode: String,
    pub out: Option<PathBuf>,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            weights: None,
            bundles: None,
            num_layers: None,
            edit_count: 1,
            mode: "inplace".into(),
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub professions: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
    /// `accuracy` or `f1`.
    pub metric: String,
    pub out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            professions: None,
            outcomes: None,
            metric: "accuracy".into(),
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// `gaussian`, `layer` or `corpus`.
    pub kind: String,
    pub n: usize,
    /// Match the sample covariance to the population covariance.
    pub exact: bool,
    /// Gaussian layout: `orthogonal`, `shared` or `random`.
    pub layout: String,
    pub dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub bias_strengths: Vec<f64>,
    pub feature_strengths: Vec<f64>,
    pub noise: f64,
    /// Corpus lexicon: `default`, `extended` or a CSV path.
    pub lexicon: String,
    /// One template per line; built-in templates when absent.
    pub templates: Option<PathBuf>,
    pub limit: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: "gaussian".into(),
            n: 1000,
            exact: false,
            layout: "orthogonal".into(),
            dim: 8,
            key_dim: 8,
            value_dim: 4,
            bias_strengths: vec![1.0],
            feature_strengths: vec![0.5],
            noise: 1.0,
            lexicon: "default".into(),
            templates: None,
            limit: None,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToylmConfig {
    /// `default`, `extended` or a CSV path.
    pub lexicon: String,
    pub templates: Option<PathBuf>,
    pub skew: f64,
    pub held_out_fraction: f64,
    pub evaluation_stride: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub residual: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub target_excess: f64,
    pub edit_count: usize,
    /// `inplace` or `refit`.
    pub mode: String,
    pub value_steps: usize,
    pub value_step_size: f64,
    /// Trained model directory read by `extract`.
    pub model: Option<PathBuf>,
    pub layer: usize,
    pub out: Option<PathBuf>,
}

impl Default for ToylmConfig {
    fn default() -> Self {
        use dualdebias::synthlab::pipeline::PipelineConfig;
        let p = PipelineConfig::default();
        Self {
            lexicon: "extended".into(),
            templates: None,
            skew: p.skew,
            held_out_fraction: p.held_out_fraction,
            evaluation_stride: p.evaluation_stride,
            embed_dim: p.train.embed_dim,
            hidden_dim: p.train.hidden_dim,
            num_layers: p.train.num_layers,
            residual: p.train.residual,
            learning_rate: p.train.learning_rate,
            weight_decay: p.train.weight_decay,
            max_epochs: p.train.max_epochs,
            target_excess: p.train.target_excess,
            edit_count: p.edit_count,
            mode: p.mode.to_string(),
            value_steps: p.values.steps,
            value_step_size: p.values.step_size,
            model: None,
            layer: 0,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Plan directory written by `plan`.
    pub plan: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Read `path` (or start empty), apply `key=value` overrides with dotted
/// keys, and deserialize. Override values are parsed as TOML and fall back
/// to a plain string.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override '{o}' is not key=value")))?;
        set_dotted(&mut doc, key.trim(), parse_value(raw.trim()))?;
    }
    toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| Error::invalid(format!("config: {}", e.message())))
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::invalid("empty override key"))?;
    let mut table = doc;
    for p in parts {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::invalid(format!("override key '{key}': '{p}' is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn tolerance(&self) -> Result<RankTolerance> {
        RankTolerance::new(self.rank_tol)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// A required path setting, or an error naming its key.
pub fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::invalid(format!("missing setting '{key}'")))
}
