use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use crate::{DistanceArg, LinkageArg};

/// Optional defaults; every key mirrors a command-line flag and flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub delimiter: Option<char>,
    pub id_column: Option<String>,
    pub distance: Option<DistanceArg>,
    pub linkage: Option<LinkageArg>,
    pub seed: Option<u64>,
    pub max_iter: Option<usize>,
    pub lambda: Option<f64>,
    pub proline_k: Option<f64>,
    pub proline_c: Option<f64>,
    pub port: Option<u16>,
    pub data_dir: Option<PathBuf>,
    pub ui_origin: Option<String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| crate::invalid(e.to_string()))
            .with_context(|| format!("parsing {}", path.display()))
    }
}
