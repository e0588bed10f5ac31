//! Key=value run configuration: model hyperparameters plus run settings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sggec::config::{parse_kv, ModelConfig};

use crate::Usage;


#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub batch_tokens: usize,
    pub max_steps: Option<u64>,
    /// Stage specs `dataset:selector:epochs:lr`.
    pub stages: Vec<String>,
    /// Named corpus prefixes.
    pub data: Vec<(String, PathBuf)>,
    /// Train on right-to-left targets.
    pub reverse: bool,
    pub corruption: String,
}

impl RunConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            seed: 1,
            batch_tokens: 1000,
            max_steps: None,
            stages: Vec::new(),
            data: Vec::new(),
            reverse: false,
            corruption: "default".into(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::new(ModelConfig::toy())),
            "base" => Ok(Self::new(ModelConfig::default())),
            _ => Err(Usage(format!("unknown preset `{name}` (expected toy or base)")).into()),
        }
    }

    /// Applies one `key=value` setting; unknown keys are a usage error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Usage(format!("bad value `{value}` for `{key}`: expected {what}"));
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad("an integer"))?,
            "batch_tokens" => self.batch_tokens = value.parse().map_err(|_| bad("an integer"))?,
            "max_steps" => {
                self.max_steps = match value {
                    "" | "none" => None,
                    v => Some(v.parse().map_err(|_| bad("an integer or none"))?),
                }
            }
            "stages" => self.stages = split_list(value),
            "data" => {
                self.data = split_list(value)
                    .iter()
                    .map(|d| parse_data(d))
                    .collect::<Result<_>>()?
            }
            "reverse" => self.reverse = value.parse().map_err(|_| bad("true or false"))?,
            "corruption" => self.corruption = value.to_string(),
            _ => {
                if !self.model.set(key, value).map_err(|e| Usage(e.to_string()))? {
                    bail!(Usage(format!("unknown config key `{key}`")));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path, base: Self) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let pairs = parse_kv(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
        let mut cfg = base;
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

fn split_list(value: &str) -> Vec<String> {
    value
        .split([',', ' '])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// `name=prefix`.
pub fn parse_data(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, prefix)) if !name.is_empty() && !prefix.is_empty() => Ok((name.to_string(), prefix.into())),
        _ => Err(Usage(format!("data spec `{spec}` is not name=prefix")).into()),
    }
}
