//! Single-file checkpoints: safetensors parameters plus a JSON header
//! describing the models they belong to.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::discriminators::{build_discriminator, Discriminator, DiscriminatorSpec};
use crate::error::{Error, Result};
use crate::generators::{build_pair, GeneratorPair, GeneratorPairSpec};

const META_KEY: &str = "asymgan";
const GEN_PREFIX: &str = "g.";
const DISC_PREFIX: &str = "d.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub generators: GeneratorPairSpec,
    #[serde(default)]
    pub discriminator: Option<DiscriminatorSpec>,
    pub image_channels: usize,
    pub image_size: usize,
    /// Domain names in label order (empty for paired data).
    #[serde(default)]
    pub domains: Vec<String>,
    #[serde(default)]
    pub epoch: usize,
    #[serde(default)]
    pub step: usize,
}

pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    pair: &GeneratorPair,
    disc: Option<&Discriminator>,
) -> Result<()> {
    let mut tensors: HashMap<String, Tensor> = pair.all_params().tensors(GEN_PREFIX);
    if let Some(d) = disc {
        tensors.extend(d.params().tensors(DISC_PREFIX));
    }
    let tensors: Vec<(String, Tensor)> = tensors
        .into_iter()
        .map(|(k, t)| Ok((k, t.to_dtype(DType::F32)?.contiguous()?)))
        .collect::<Result<_>>()?;
    let header = HashMap::from([(META_KEY.to_string(), serde_json::to_string(meta)?)]);
    safetensors::serialize_to_file(tensors, Some(header), path)?;
    Ok(())
}

fn read_meta_from(bytes: &[u8], path: &Path) -> Result<CheckpointMeta> {
    let (_, header) = safetensors::SafeTensors::read_metadata(bytes)?;
    let json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Spec(format!("{} carries no model description", path.display())))?;
    Ok(serde_json::from_str(json)?)
}

pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path)?;
    read_meta_from(&bytes, path)
}

/// Restores parameters into already built models after checking that the
/// stored generator spec equals `expected`.
pub fn load_into(
    path: &Path,
    expected: &GeneratorPairSpec,
    pair: &GeneratorPair,
    disc: Option<&Discriminator>,
) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path)?;
    let meta = read_meta_from(&bytes, path)?;
    if &meta.generators != expected {
        return Err(Error::Spec(format!(
            "checkpoint was written for {:?}, not {:?}",
            meta.generators, expected
        )));
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    pair.all_params().load(GEN_PREFIX, &tensors)?;
    if let Some(d) = disc {
        d.params().load(DISC_PREFIX, &tensors)?;
    }
    Ok(meta)
}

/// Rebuilds the generator pair (and discriminator, when stored) from a checkpoint.
pub fn load_models(path: &Path) -> Result<(CheckpointMeta, GeneratorPair, Option<Discriminator>)> {
    let meta = read_checkpoint_meta(path)?;
    let pair = build_pair(&meta.generators, meta.image_channels, meta.image_size, 0)?;
    let disc = match &meta.discriminator {
        Some(spec) => Some(build_discriminator(spec, meta.image_size, 0)?),
        None => None,
    };
    load_into(path, &meta.generators, &pair, disc.as_ref())?;
    Ok((meta, pair, disc))
}
