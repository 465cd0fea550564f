//! The single JSON config every command reads; command-line flags win.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use asymgan::discriminators::DiscriminatorSpec;
use asymgan::generators::{ArchTier, GeneratorPairSpec, GuidanceSpec, SharingMode};
use asymgan::metrics::ClassifierConfig;
use asymgan::training::{ModelSpecs, TrainConfig};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Unpaired,
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub domains: usize,
    pub per_domain: usize,
    pub subjects: usize,
    pub poses_per_subject: usize,
    pub image_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            domains: 3,
            per_domain: 30,
            subjects: 6,
            poses_per_subject: 4,
            image_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub extractor: String,
    pub classifier: ClassifierConfig,
    pub splits: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            extractor: "random-conv".into(),
            classifier: ClassifierConfig::default(),
            splits: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub models: Option<ModelSpecs>,
    /// Fields laid over the mode's default training config.
    pub train: Option<serde_json::Map<String, serde_json::Value>>,
    pub synth: SynthConfig,
    pub evaluate: EvalConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn train_config(&self, mode: Mode) -> Result<TrainConfig> {
        let base = match mode {
            Mode::Unpaired => TrainConfig::unsupervised(),
            Mode::Paired => TrainConfig::supervised(),
        };
        let Some(overrides) = &self.train else {
            return Ok(base);
        };
        let serde_json::Value::Object(mut merged) = serde_json::to_value(base)? else {
            unreachable!("training config serialises to an object")
        };
        merged.extend(overrides.clone());
        serde_json::from_value(serde_json::Value::Object(merged)).context("invalid `train` section")
    }

    /// Configured models, or the default pair for `mode` sized to the data.
    pub fn model_specs(&self, mode: Mode, num_domains: usize, image_size: usize) -> ModelSpecs {
        self.models.unwrap_or_else(|| default_specs(mode, num_domains, image_size))
    }
}

fn patch_layers(image_size: usize) -> usize {
    // keep at least a 2x2 score map
    let mut n = 1;
    while n < 3 && image_size >> (n + 1) >= 4 {
        n += 1;
    }
    n
}

pub fn default_specs(mode: Mode, num_domains: usize, image_size: usize) -> ModelSpecs {
    match mode {
        Mode::Unpaired => ModelSpecs {
            generators: GeneratorPairSpec::new(
                ArchTier::TierIII,
                ArchTier::TierI,
                SharingMode::None,
                GuidanceSpec::DomainLabel {
                    num_domains,
                    embed_dim: 64,
                },
            ),
            discriminator: DiscriminatorSpec::multidomain(num_domains, patch_layers(image_size)),
        },
        Mode::Paired => ModelSpecs {
            generators: GeneratorPairSpec::new(
                ArchTier::Resnet9 { base_width: 64 },
                ArchTier::Resnet9 { base_width: 4 },
                SharingMode::None,
                GuidanceSpec::Skeleton { channels: 3 },
            ),
            discriminator: DiscriminatorSpec::triplet(3, 3),
        },
    }
}
