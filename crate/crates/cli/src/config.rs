use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use audiocap_core::{FeatureExtractionConfig, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Default locations; command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub audio_dir: Option<PathBuf>,
    pub captions: Option<PathBuf>,
    pub features_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Everything a run needs, serialized as one JSON document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub features: FeatureExtractionConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.training.seed = s;
        }
        cfg.features.validate()?;
        cfg.training.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Picks the flag value, falling back to the config, and checks it exists.
pub fn resolve(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str, must_exist: bool) -> Result<PathBuf> {
    let Some(p) = flag.or_else(|| fallback.clone()) else {
        bail!("no {what} given (flag or config paths.{})", what.replace(' ', "_"));
    };
    if must_exist && !p.exists() {
        bail!("{what} not found: {}", p.display());
    }
    Ok(p)
}
