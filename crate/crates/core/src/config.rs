//! Run configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoding::DecodeConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    /// Prompt vectors per side; the same k is used for the inverse prompts.
    pub k: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self { k: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub max_vocab: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            valid: None,
            max_vocab: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub prompt: PromptConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Every section's own checks plus the cross-section ones.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Usage(msg) => Error::Config(msg),
            other => other,
        };
        self.model.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.decode.validate().map_err(wrap)?;
        if self.prompt.k == 0 {
            return Err(Error::Config("prompt.k must be at least 1".into()));
        }
        if 2 * self.prompt.k >= self.model.max_positions {
            return Err(Error::Config(format!(
                "2k = {} prompt slots leave no room within model.max_positions = {}",
                2 * self.prompt.k,
                self.model.max_positions
            )));
        }
        if self.data.max_vocab <= crate::data::SPECIALS.len() {
            return Err(Error::Config(
                "data.max_vocab must exceed the special-token count".into(),
            ));
        }
        Ok(())
    }
}
