//! Run config files: a [`TrainConfig`] document plus an optional top-level
//! `out_dir`. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ukd_core::harness::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub config: TrainConfig,
    pub out_dir: Option<PathBuf>,
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ukd_core::Error::Config(e.to_string()))?;
        let out_dir = match table.remove("out_dir") {
            None => None,
            Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
            Some(other) => {
                return Err(ukd_core::Error::Config(format!("out_dir must be a string, got {other}")).into());
            }
        };
        let config = TrainConfig::from_toml(&toml::to_string(&table).map_err(|e| ukd_core::Error::Config(e.to_string()))?)?;
        Ok(Self { config, out_dir })
    }

    #[cfg(test)]
    pub fn render(&self) -> Result<String> {
        let mut text = String::new();
        if let Some(d) = &self.out_dir {
            text.push_str(&format!("out_dir = {}\n", toml::Value::String(d.display().to_string())));
        }
        text.push_str(&self.config.to_toml()?);
        Ok(text)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }
}
