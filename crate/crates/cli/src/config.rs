//! Flat TOML configuration merged under command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

/// A scalar or a list, so `granularity = 300` and `granularity = [60, 300]`
/// both parse.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(u64),
    Many(Vec<u64>),
}

impl OneOrMany {
    pub fn into_vec(self) -> Vec<u64> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Every key is optional; keys mirror the long flag names with `_` for `-`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub granularity: Option<OneOrMany>,
    pub t_known: Option<OneOrMany>,
    pub horizon: Option<u64>,
    pub split: Option<f64>,
    pub method: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub tic_variant: Option<String>,
    pub events: Option<PathBuf>,
    pub releases: Option<PathBuf>,
    pub zero_based: Option<bool>,
    pub preset: Option<String>,
    pub route: Option<String>,
    pub weighting: Option<String>,
    pub n_messages: Option<usize>,
}

impl FileConfig {
    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg.rebase(path.parent().unwrap_or(Path::new("."))))
    }

    /// Relative paths in the file are relative to the file's directory.
    fn rebase(mut self, dir: &Path) -> Self {
        for p in [&mut self.out_dir, &mut self.events, &mut self.releases].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        self
    }
}
