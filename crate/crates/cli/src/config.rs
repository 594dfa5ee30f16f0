//! Run configuration: one TOML document describing the model, training
//! recipe, synthetic-data recipe, data paths, and output directory.
//! Unknown keys are hard errors so hyperparameter typos cannot pass
//! silently; the fully-defaulted document is persisted next to every run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use prefixboost::data::SynthConfig;
use prefixboost::model::ModelConfig;
use prefixboost::trainer::TrainConfig;
use prefixboost::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub vocab: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            train: "data/train.jsonl".into(),
            dev: "data/dev.jsonl".into(),
            vocab: "data/vocab.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub train: SynthConfig,
    pub dev: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            train: SynthConfig::default(),
            dev: SynthConfig {
                n: 50,
                seed: 1000,
                ..SynthConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataPaths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: "runs/default".into(),
            data: DataPaths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        config.train.validate()?;
        if config.synth.train.vocab_size != config.synth.dev.vocab_size
            || config.synth.train.feat_dim != config.synth.dev.feat_dim
            || config.synth.train.frames_per_char != config.synth.dev.frames_per_char
            || config.synth.train.embedding_seed != config.synth.dev.embedding_seed
        {
            return Err(Error::config(
                "synth train/dev must share vocab_size, feat_dim, frames_per_char, and embedding_seed",
            ));
        }
        Ok(config)
    }

    /// The config with every default materialized, as a TOML document.
    pub fn effective_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }
}
