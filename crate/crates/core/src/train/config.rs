//! Stage ladder configuration and its TOML file form.
//!
//! ```toml
//! [model]
//! model_dim = 64
//!
//! [[stage]]
//! resolution = 32
//! grid = 8
//! steps = 2000
//! batch_size = 16
//! learning_rate = 1e-3
//! seed = 0
//! cond_dropout_prob = 0.1
//! init = "fresh"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_error, TrainError};
use crate::nn::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageInit {
    Fresh,
    FromCheckpointWithPosInterp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub resolution: usize,
    pub grid: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Defaults to [`StageConfig::DEFAULT_COND_DROPOUT`] when omitted.
    #[serde(default = "default_cond_dropout")]
    pub cond_dropout_prob: f64,
    pub init: StageInit,
}

fn default_cond_dropout() -> f64 {
    StageConfig::DEFAULT_COND_DROPOUT
}

impl StageConfig {
    pub const DEFAULT_COND_DROPOUT: f64 = 0.1;

    /// Checks the stage against the architecture it trains. Zero steps and
    /// a zero learning rate are accepted as explicit no-op runs, and a
    /// dropout probability of 1 trains only the unconditional path.
    pub fn validate(&self, spec: &ModelSpec) -> Result<(), TrainError> {
        if self.grid == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("grid and batch_size must be positive".into()));
        }
        let expected = self.grid * spec.patch_size * spec.codec_factor;
        if self.resolution != expected {
            return Err(TrainError::Config(format!(
                "resolution {} != grid {} x patch {} x codec factor {}",
                self.resolution, self.grid, spec.patch_size, spec.codec_factor
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout_prob) {
            return Err(TrainError::Config(format!(
                "cond_dropout_prob {} outside [0, 1]",
                self.cond_dropout_prob
            )));
        }
        spec.model_config(self.grid).validate()?;
        Ok(())
    }
}

/// Resolution-independent architecture; combined with a stage grid it
/// yields a [`ModelConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub patch_size: usize,
    pub codec_factor: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub cond_dim: usize,
    pub cond_tokens_count: usize,
    pub cond_pool: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            patch_size: 2,
            codec_factor: 2,
            model_dim: 64,
            heads: 4,
            blocks: 2,
            cond_dim: 32,
            cond_tokens_count: 16,
            cond_pool: 2,
        }
    }
}

impl ModelSpec {
    pub fn model_config(&self, grid: usize) -> ModelConfig {
        ModelConfig {
            latent_channels: self.codec_factor * self.codec_factor,
            patch_size: self.patch_size,
            grid,
            model_dim: self.model_dim,
            heads: self.heads,
            blocks: self.blocks,
            cond_dim: self.cond_dim,
            cond_tokens_count: self.cond_tokens_count,
            cond_pool: self.cond_pool,
        }
    }

    /// Inverse of [`ModelSpec::model_config`], given the codec factor.
    pub fn from_model_config(cfg: &ModelConfig, codec_factor: usize) -> Result<Self, TrainError> {
        if codec_factor * codec_factor != cfg.latent_channels {
            return Err(TrainError::Config(format!(
                "codec factor {codec_factor} does not give {} latent channels",
                cfg.latent_channels
            )));
        }
        Ok(Self {
            patch_size: cfg.patch_size,
            codec_factor,
            model_dim: cfg.model_dim,
            heads: cfg.heads,
            blocks: cfg.blocks,
            cond_dim: cfg.cond_dim,
            cond_tokens_count: cfg.cond_tokens_count,
            cond_pool: cfg.cond_pool,
        })
    }
}

/// A training configuration file: one architecture and a stage ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfigFile {
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(rename = "stage")]
    pub stages: Vec<StageConfig>,
}

impl TrainConfigFile {
    /// Default two-stage ladder: 32 px then 64 px.
    pub fn default_ladder(seed: u64) -> Self {
        let stage = |resolution: usize, grid: usize, learning_rate: f64, init: StageInit| StageConfig {
            resolution,
            grid,
            steps: 2000,
            batch_size: 16,
            learning_rate,
            seed,
            cond_dropout_prob: StageConfig::DEFAULT_COND_DROPOUT,
            init,
        };
        Self {
            model: ModelSpec::default(),
            stages: vec![
                stage(32, 8, 1e-3, StageInit::Fresh),
                stage(64, 16, 5e-4, StageInit::FromCheckpointWithPosInterp),
            ],
        }
    }

    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let file: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        if file.stages.is_empty() {
            return Err(TrainError::Config("no [[stage]] entries".into()));
        }
        for s in &file.stages {
            s.validate(&file.model)?;
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> Result<String, TrainError> {
        toml::to_string(self).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| io_error(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ladder_round_trips_through_toml() {
        let f = TrainConfigFile::default_ladder(7);
        let text = f.to_toml().unwrap();
        assert_eq!(TrainConfigFile::parse(&text).unwrap(), f);
    }

    #[test]
    fn module_doc_example_parses() {
        let text = "[model]\nmodel_dim = 64\n\n[[stage]]\nresolution = 32\ngrid = 8\nsteps = 2000\nbatch_size = 16\n\
                    learning_rate = 1e-3\nseed = 0\ncond_dropout_prob = 0.1\ninit = \"fresh\"\n";
        let f = TrainConfigFile::parse(text).unwrap();
        assert_eq!(f.model, ModelSpec::default());
        assert_eq!(f.stages[0].init, StageInit::Fresh);
    }

    #[test]
    fn omitted_cond_dropout_uses_default() {
        let text = "[[stage]]\nresolution = 32\ngrid = 8\nsteps = 10\nbatch_size = 4\n\
                    learning_rate = 1e-3\nseed = 0\ninit = \"fresh\"\n";
        let f = TrainConfigFile::parse(text).unwrap();
        assert_eq!(f.stages[0].cond_dropout_prob, StageConfig::DEFAULT_COND_DROPOUT);
    }

    #[test]
    fn invalid_stages_rejected() {
        let spec = ModelSpec::default();
        let mut s = TrainConfigFile::default_ladder(0).stages[0].clone();
        s.validate(&spec).unwrap();
        s.resolution = 48;
        assert!(s.validate(&spec).is_err());
        s.resolution = 32;
        s.cond_dropout_prob = 1.5;
        assert!(s.validate(&spec).is_err());
        s.cond_dropout_prob = 0.1;
        s.learning_rate = f64::NAN;
        assert!(s.validate(&spec).is_err());
        assert!(TrainConfigFile::parse("[[stage]]\nresolution = 32\n").is_err());
        assert!(TrainConfigFile::parse("[model]\nbogus = 1\n[[stage]]\n").is_err());
    }

    #[test]
    fn model_config_round_trip() {
        let spec = ModelSpec::default();
        let cfg = spec.model_config(8);
        assert_eq!(cfg.latent_side() * spec.codec_factor, 32);
        assert_eq!(ModelSpec::from_model_config(&cfg, 2).unwrap(), spec);
        assert!(ModelSpec::from_model_config(&cfg, 3).is_err());
    }
}
