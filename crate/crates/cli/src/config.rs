//! `klconfig.json`: defaults for directories, backend and budgets.
//! Command-line flags override environment variables, which override the file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "klconfig.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Sim,
    Subprocess,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub wisdom_dir: Option<PathBuf>,
    pub capture_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    /// Compiler command template, e.g. `nvcc -cubin {FLAGS} -o {OUTPUT} {SOURCE}`.
    pub compile_command: Option<String>,
    /// Benchmark command template; must print the kernel time in seconds.
    pub bench_command: Option<String>,
    pub budget_seconds: Option<f64>,
    pub seed: Option<u64>,
}

impl CliConfig {
    /// Reads `explicit`, or `klconfig.json` in the working directory if present.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let p = PathBuf::from(FILE_NAME);
                if !p.exists() {
                    return Ok(Self::default());
                }
                p
            }
        };
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let config: CliConfig = serde_json::from_str(&text)
            .with_context(|| format!("malformed config file {}", path.display()))?;
        if let Some(b) = config.budget_seconds {
            anyhow::ensure!(b > 0.0, "{}: budget_seconds must be positive", path.display());
        }
        Ok(config)
    }
}

/// Flag, then environment variable, then config value.
pub fn resolve_dir(flag: Option<PathBuf>, env: &str, config: Option<&PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(env).map(PathBuf::from))
        .or_else(|| config.cloned())
}
