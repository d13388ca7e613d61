use std::path::{Path, PathBuf};

use serde::Deserialize;

use promptscope_core::provider::ENDPOINT_ENV;

/// Settings read from a TOML file. Command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub store: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub default_k: Option<usize>,
    pub lexicon: Option<PathBuf>,
    pub timeout_ms: Option<u64>,
    pub listen: Option<String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Flag, then the environment, then the file.
    pub fn endpoint(&self, flag: Option<&str>) -> Option<String> {
        flag.map(str::to_owned)
            .or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()))
            .or_else(|| self.endpoint.clone())
    }
}
