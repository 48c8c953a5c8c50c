//! One module per verb. Every verb reads the resolved [`RunConfig`],
//! writes into its section's `out` directory and echoes the resolved
//! config there.

mod edit;
mod estimate;
mod eval;
mod plan;
mod report;
mod synth;
mod toylm;

use std::fs;
use std::path::{Path, PathBuf};

use dualdebias::synthlab::{
    default_lexicon, default_templates, extended_lexicon, parse_lexicon, LexiconEntry,
};
use dualdebias::{Error, Result};

use crate::config::{RunConfig, RESOLVED_NAME};
use crate::store::{ensure_dir, write_text};

pub use edit::run as edit;
pub use estimate::run as estimate;
pub use eval::run as eval;
pub use plan::run as plan;
pub use report::run as report;
pub use synth::run as synth;
pub use toylm::{
    edit_pipeline as toylm_edit_pipeline, extract as toylm_extract, train as toylm_train,
};

/// Create the output directory and write the resolved config into it.
fn prepare_out(config: &RunConfig, out: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let dir = crate::config::required(out, key)?.to_path_buf();
    ensure_dir(&dir)?;
    write_text(&dir.join(RESOLVED_NAME), &config.to_toml())?;
    Ok(dir)
}

/// `default`, `extended`, or a lexicon file.
fn lexicon(spec: &str) -> Result<Vec<LexiconEntry>> {
    match spec {
        "default" => Ok(default_lexicon()),
        "extended" => Ok(extended_lexicon()),
        path => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_lexicon(&text)
        }
    }
}

/// Non-empty, non-comment lines of a template file, or the built-in set.
fn templates(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        None => Ok(default_templates()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect())
        }
    }
}

/// Shortest representation that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}
