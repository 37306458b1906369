use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use semcap::dataset::SynthConfig;
use semcap::models::CaptionerConfig;
use semcap::training::{ClassifierTrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Captioner layer widths. The vocabulary, feature and attribute sizes come
/// from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attr_hidden_dim: usize,
    pub attention_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embed_dim: 512,
            hidden_dim: 512,
            attr_hidden_dim: 512,
            attention_dim: 512,
        }
    }
}

impl ModelDims {
    pub fn uniform(width: usize) -> Self {
        Self {
            embed_dim: width,
            hidden_dim: width,
            attr_hidden_dim: width,
            attention_dim: width,
        }
    }

    pub fn captioner(
        &self,
        vocab_size: usize,
        feature_dim: usize,
        n_attributes: usize,
    ) -> CaptionerConfig {
        CaptionerConfig {
            vocab_size,
            feature_dim,
            n_attributes,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            attr_hidden_dim: self.attr_hidden_dim,
            attention_dim: self.attention_dim,
        }
    }
}

/// Everything `train` reads from its `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelDims,
    pub train: TrainConfig,
}

/// Settings of `pretrain-classifier`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierRunConfig {
    pub embed_dim: usize,
    pub filters: usize,
    pub dropout: f64,
    pub train: ClassifierTrainConfig,
}

impl Default for ClassifierRunConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            filters: 64,
            dropout: 0.5,
            train: ClassifierTrainConfig::default(),
        }
    }
}

/// Settings of `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRunConfig {
    pub corpus: SynthConfig,
    pub split: [f64; 3],
    pub min_count: usize,
}

impl Default for SynthRunConfig {
    fn default() -> Self {
        Self {
            corpus: SynthConfig::default(),
            split: [0.8, 0.1, 0.1],
            min_count: 5,
        }
    }
}

/// Reads a JSON config file, or the defaults when no path is given.
pub fn load<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("config {}", p.display()))
        }
    }
}

/// Canonical bytes of a resolved config; its hash identifies the run.
pub fn canonical_bytes<T: Serialize>(cfg: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec_pretty(cfg)?)
}

pub fn parse_split(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected three fractions, got {}", v.len()))
}
