//! Generator architecture strategies and their name-keyed registry.
//!
//! An architecture only describes its layer layout; [`super::build_pair`]
//! instantiates layouts and wires parameter sharing between the two
//! generators.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;

/// Selectable generator architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tier", rename_all = "snake_case")]
pub enum ArchTier {
    /// Seven convolution + nonlinearity stages at width 7 (about 2.9K parameters).
    #[serde(rename = "tier_i")]
    TierI,
    /// Symmetric two-level encoder-decoder (about 1.4M parameters).
    #[serde(rename = "tier_ii")]
    TierII,
    /// Tier II with six bottleneck residual blocks (about 8.5M parameters).
    #[serde(rename = "tier_iii")]
    TierIII,
    /// Nine-residual-block network whose first layer has `base_width` filters.
    Resnet9 { base_width: usize },
}

impl ArchTier {
    pub fn name(&self) -> &'static str {
        match self {
            ArchTier::TierI => "tier_i",
            ArchTier::TierII => "tier_ii",
            ArchTier::TierIII => "tier_iii",
            ArchTier::Resnet9 { .. } => "resnet9",
        }
    }

    /// Parses `tier_i`, `tier_ii`, `tier_iii` or `resnet9:<width>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "tier_i" | "i" | "1" => Ok(ArchTier::TierI),
            "tier_ii" | "ii" | "2" => Ok(ArchTier::TierII),
            "tier_iii" | "iii" | "3" => Ok(ArchTier::TierIII),
            _ => match s.strip_prefix("resnet9:") {
                Some(w) => {
                    let base_width = w
                        .parse()
                        .map_err(|_| Error::Spec(format!("bad resnet9 width `{w}`")))?;
                    Ok(ArchTier::Resnet9 { base_width })
                }
                None => Err(Error::Spec(format!("unknown architecture `{s}`"))),
            },
        }
    }

    pub fn base_width(&self) -> Option<usize> {
        match self {
            ArchTier::Resnet9 { base_width } => Some(*base_width),
            _ => None,
        }
    }
}

impl fmt::Display for ArchTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchTier::Resnet9 { base_width } => write!(f, "resnet9:{base_width}"),
            other => f.write_str(other.name()),
        }
    }
}

/// One layer of a generator layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        norm: bool,
        act: Activation,
    },
    ConvTranspose {
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        norm: bool,
        act: Activation,
    },
    /// Same-width residual block.
    Residual,
    /// Concatenates the broadcast label embedding and applies a 1x1 conv + ReLU.
    LabelFusion { out: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchLayout {
    /// Image-side stem and downsampling stages; the part shared under partial sharing.
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    /// Total spatial downsampling; input sides must be divisible by it.
    pub downsampling: usize,
}

/// Channel plumbing an architecture has to honour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchIo {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Embedding width when domain labels are fused at the bottleneck.
    pub label_embed: Option<usize>,
}

/// A generator architecture strategy.
pub trait GeneratorArch: Send + Sync {
    fn name(&self) -> &str;
    fn layout(&self, io: &ArchIo) -> ArchLayout;
}

fn conv(out: usize, kernel: usize, stride: usize, padding: usize) -> LayerSpec {
    LayerSpec::Conv {
        out,
        kernel,
        stride,
        padding,
        norm: true,
        act: Activation::Relu,
    }
}

fn output_conv(out: usize, kernel: usize) -> LayerSpec {
    LayerSpec::Conv {
        out,
        kernel,
        stride: 1,
        padding: kernel / 2,
        norm: false,
        act: Activation::Tanh,
    }
}

/// Seven stride-1 stages; the one before the output projection hosts the
/// conditioning, so no normalisation sits between the label and the output.
pub struct TierOne {
    pub width: usize,
}

impl GeneratorArch for TierOne {
    fn name(&self) -> &str {
        "tier_i"
    }

    fn layout(&self, io: &ArchIo) -> ArchLayout {
        let w = self.width;
        let mut decoder: Vec<LayerSpec> = (0..4).map(|_| conv(w, 3, 1, 1)).collect();
        decoder.push(match io.label_embed {
            Some(_) => LayerSpec::LabelFusion { out: w },
            None => conv(w, 1, 1, 0),
        });
        decoder.push(output_conv(io.out_channels, 3));
        ArchLayout {
            encoder: vec![conv(w, 3, 1, 1)],
            decoder,
            downsampling: 1,
        }
    }
}

/// 7x7 stem, two stride-2 4x4 downsamplers, optional residual bottleneck,
/// mirrored transposed-conv decoder.
pub struct EncoderDecoder {
    pub base_width: usize,
    pub residual_blocks: usize,
    name: &'static str,
}

impl GeneratorArch for EncoderDecoder {
    fn name(&self) -> &str {
        self.name
    }

    fn layout(&self, io: &ArchIo) -> ArchLayout {
        let w = self.base_width;
        let mut decoder = Vec::new();
        if io.label_embed.is_some() {
            decoder.push(LayerSpec::LabelFusion { out: 4 * w });
        }
        decoder.extend((0..self.residual_blocks).map(|_| LayerSpec::Residual));
        for out in [2 * w, w] {
            decoder.push(LayerSpec::ConvTranspose {
                out,
                kernel: 4,
                stride: 2,
                padding: 1,
                output_padding: 0,
                norm: true,
                act: Activation::Relu,
            });
        }
        decoder.push(output_conv(io.out_channels, 7));
        ArchLayout {
            encoder: vec![conv(w, 7, 1, 3), conv(2 * w, 4, 2, 1), conv(4 * w, 4, 2, 1)],
            decoder,
            downsampling: 4,
        }
    }
}

/// Nine-block residual network with 3x3 stride-2 resampling.
pub struct ResnetNine {
    pub base_width: usize,
}

impl GeneratorArch for ResnetNine {
    fn name(&self) -> &str {
        "resnet9"
    }

    fn layout(&self, io: &ArchIo) -> ArchLayout {
        let w = self.base_width;
        let mut decoder = Vec::new();
        if io.label_embed.is_some() {
            decoder.push(LayerSpec::LabelFusion { out: 4 * w });
        }
        decoder.extend((0..9).map(|_| LayerSpec::Residual));
        for out in [2 * w, w] {
            decoder.push(LayerSpec::ConvTranspose {
                out,
                kernel: 3,
                stride: 2,
                padding: 1,
                output_padding: 1,
                norm: true,
                act: Activation::Relu,
            });
        }
        decoder.push(output_conv(io.out_channels, 7));
        ArchLayout {
            encoder: vec![conv(w, 7, 1, 3), conv(2 * w, 3, 2, 1), conv(4 * w, 3, 2, 1)],
            decoder,
            downsampling: 4,
        }
    }
}

type ArchFactory = Arc<dyn Fn(&ArchTier) -> Result<Box<dyn GeneratorArch>> + Send + Sync>;

/// Name-keyed architecture factories.
#[derive(Clone)]
pub struct ArchRegistry {
    factories: BTreeMap<String, ArchFactory>,
}

impl Default for ArchRegistry {
    fn default() -> Self {
        let mut reg = Self {
            factories: BTreeMap::new(),
        };
        reg.register("tier_i", |_| Ok(Box::new(TierOne { width: 7 })));
        reg.register("tier_ii", |_| {
            Ok(Box::new(EncoderDecoder {
                base_width: 64,
                residual_blocks: 0,
                name: "tier_ii",
            }))
        });
        reg.register("tier_iii", |_| {
            Ok(Box::new(EncoderDecoder {
                base_width: 64,
                residual_blocks: 6,
                name: "tier_iii",
            }))
        });
        reg.register("resnet9", |tier| match tier.base_width() {
            Some(w) if w >= 1 => Ok(Box::new(ResnetNine { base_width: w })),
            _ => Err(Error::Spec("resnet9 needs base_width >= 1".into())),
        });
        reg
    }
}

impl ArchRegistry {
    /// Registers (or replaces) the factory behind `name`.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&ArchTier) -> Result<Box<dyn GeneratorArch>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Arc::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn resolve(&self, tier: &ArchTier) -> Result<Box<dyn GeneratorArch>> {
        let factory = self
            .factories
            .get(tier.name())
            .ok_or_else(|| Error::Spec(format!("no architecture registered as `{}`", tier.name())))?;
        factory(tier)
    }
}
