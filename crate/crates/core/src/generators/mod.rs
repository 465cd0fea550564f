//! The asymmetric translation / reconstruction generator pair.

mod arch;

pub use arch::{
    ArchIo, ArchLayout, ArchRegistry, ArchTier, EncoderDecoder, GeneratorArch, LayerSpec,
    ResnetNine, TierOne,
};

use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::datamodel::{one_hot_batch, DomainLabel, ImageTensor, SkeletonMap};
use crate::error::{shape_err, validation_err, Error, Result};
use crate::nn::{Activation, ConvGeom, ConvUnit, Dense, ParamBuilder, ParamSet, ResidualBlock};

pub const DEFAULT_LABEL_EMBED: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingMode {
    /// One parameter set serves both generators.
    Full,
    /// The image encoder is shared; decoders are separate.
    PartialEncoder,
    None,
}

impl SharingMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(SharingMode::Full),
            "partial" | "partial_encoder" => Ok(SharingMode::PartialEncoder),
            "none" => Ok(SharingMode::None),
            other => Err(Error::Spec(format!("unknown sharing mode `{other}`"))),
        }
    }
}

fn default_embed() -> usize {
    DEFAULT_LABEL_EMBED
}

/// How both generators are conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GuidanceSpec {
    DomainLabel {
        num_domains: usize,
        #[serde(default = "default_embed")]
        embed_dim: usize,
    },
    Skeleton {
        channels: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorPairSpec {
    pub translate_arch: ArchTier,
    pub reconstruct_arch: ArchTier,
    pub sharing: SharingMode,
    pub guidance: GuidanceSpec,
}

impl GeneratorPairSpec {
    pub fn new(
        translate_arch: ArchTier,
        reconstruct_arch: ArchTier,
        sharing: SharingMode,
        guidance: GuidanceSpec,
    ) -> Self {
        Self {
            translate_arch,
            reconstruct_arch,
            sharing,
            guidance,
        }
    }

    fn arch_io(&self, image_channels: usize) -> ArchIo {
        match self.guidance {
            GuidanceSpec::DomainLabel { embed_dim, .. } => ArchIo {
                in_channels: image_channels,
                out_channels: image_channels,
                label_embed: Some(embed_dim),
            },
            GuidanceSpec::Skeleton { channels } => ArchIo {
                in_channels: image_channels + channels,
                out_channels: image_channels,
                label_embed: None,
            },
        }
    }

    /// Checks the sharing constraints against resolved layouts.
    pub fn validate(&self, registry: &ArchRegistry, image_channels: usize) -> Result<()> {
        match self.guidance {
            GuidanceSpec::DomainLabel {
                num_domains,
                embed_dim,
            } => {
                if num_domains < 2 {
                    return Err(Error::Spec(format!("need at least 2 domains, got {num_domains}")));
                }
                if embed_dim == 0 {
                    return Err(Error::Spec("label embedding width must be positive".into()));
                }
            }
            GuidanceSpec::Skeleton { channels } if channels == 0 => {
                return Err(Error::Spec("skeleton guidance needs at least one channel".into()));
            }
            GuidanceSpec::Skeleton { .. } => {}
        }
        let io = self.arch_io(image_channels);
        let t = registry.resolve(&self.translate_arch)?.layout(&io);
        let r = registry.resolve(&self.reconstruct_arch)?.layout(&io);
        match self.sharing {
            SharingMode::Full if self.translate_arch != self.reconstruct_arch => Err(Error::Spec(
                format!(
                    "full sharing needs identical architectures, got {} and {}",
                    self.translate_arch, self.reconstruct_arch
                ),
            )),
            SharingMode::PartialEncoder if t.encoder != r.encoder => Err(Error::Spec(format!(
                "partial sharing needs identical encoders; {} and {} differ",
                self.translate_arch, self.reconstruct_arch
            ))),
            _ => Ok(()),
        }
    }
}

/// Conditioning input for one forward pass.
#[derive(Debug, Clone)]
pub enum Guidance {
    /// `(batch, m)` one-hot rows.
    Domain(Tensor),
    /// `(batch, c, h, w)` skeleton rasters.
    Skeleton(Tensor),
}

impl Guidance {
    pub fn domains(labels: &[DomainLabel], dtype: DType, device: &Device) -> Result<Self> {
        Ok(Guidance::Domain(one_hot_batch(labels, dtype, device)?))
    }

    pub fn skeleton(map: &SkeletonMap) -> Result<Self> {
        Ok(Guidance::Skeleton(map.batched()?))
    }
}

#[derive(Debug, Clone)]
enum Layer {
    Unit(ConvUnit),
    Residual(ResidualBlock),
    Fusion(ConvUnit),
}

#[derive(Debug, Clone)]
struct Stack {
    layers: Vec<Layer>,
}

impl Stack {
    fn build(
        pb: &mut ParamBuilder,
        prefix: &str,
        specs: &[LayerSpec],
        mut channels: usize,
        label_dim: usize,
    ) -> Result<(Self, usize)> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let name = format!("{prefix}.{i}");
            let layer = match *spec {
                LayerSpec::Conv {
                    out,
                    kernel,
                    stride,
                    padding,
                    norm,
                    act,
                } => {
                    let geom = ConvGeom {
                        kernel,
                        stride,
                        padding,
                    };
                    let unit = ConvUnit::conv(pb, &name, channels, out, geom, norm, act)?;
                    channels = out;
                    Layer::Unit(unit)
                }
                LayerSpec::ConvTranspose {
                    out,
                    kernel,
                    stride,
                    padding,
                    output_padding,
                    norm,
                    act,
                } => {
                    let geom = ConvGeom {
                        kernel,
                        stride,
                        padding,
                    };
                    let unit = ConvUnit::conv_transpose(
                        pb,
                        &name,
                        channels,
                        out,
                        geom,
                        output_padding,
                        norm,
                        act,
                    )?;
                    channels = out;
                    Layer::Unit(unit)
                }
                LayerSpec::Residual => Layer::Residual(ResidualBlock::new(pb, &name, channels)?),
                LayerSpec::LabelFusion { out } => {
                    let geom = ConvGeom {
                        kernel: 1,
                        stride: 1,
                        padding: 0,
                    };
                    let unit = ConvUnit::conv(
                        pb,
                        &name,
                        channels + label_dim,
                        out,
                        geom,
                        false,
                        Activation::Relu,
                    )?;
                    channels = out;
                    Layer::Fusion(unit)
                }
            };
            layers.push(layer);
        }
        Ok((Self { layers }, channels))
    }

    fn forward(&self, x: &Tensor, label_map: Option<&Tensor>) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Unit(u) => u.forward(&h)?,
                Layer::Residual(r) => r.forward(&h)?,
                Layer::Fusion(u) => {
                    let Some(label) = label_map else {
                        return validation_err("label fusion layer needs a domain label");
                    };
                    let (n, _, hh, ww) = h.dims4()?;
                    let e = label.dim(1)?;
                    let label = label.reshape((n, e, 1, 1))?.broadcast_as((n, e, hh, ww))?;
                    u.forward(&Tensor::cat(&[&h, &label], 1)?)?
                }
            };
        }
        Ok(h)
    }
}

#[derive(Debug)]
struct Encoder {
    stack: Stack,
    params: ParamSet,
}

#[derive(Debug)]
struct Decoder {
    embed: Option<Dense>,
    stack: Stack,
    params: ParamSet,
}

/// One conditional generator: `(image, guidance) -> image` in [-1, 1].
#[derive(Debug, Clone)]
pub struct Generator {
    arch: ArchTier,
    guidance: GuidanceSpec,
    image_channels: usize,
    downsampling: usize,
    encoder: Arc<Encoder>,
    decoder: Arc<Decoder>,
}

impl Generator {
    pub fn arch(&self) -> ArchTier {
        self.arch
    }

    pub fn guidance_spec(&self) -> GuidanceSpec {
        self.guidance
    }

    /// Exact scalar parameter count of this generator.
    pub fn count_parameters(&self) -> usize {
        self.encoder.params.count() + self.decoder.params.count()
    }

    pub fn encoder_parameters(&self) -> usize {
        self.encoder.params.count()
    }

    /// Label embedding broadcast to `(1, embed, h, w)` for a single one-hot vector.
    pub fn embed_label(&self, one_hot: &[f32], spatial: (usize, usize)) -> Result<ImageTensor> {
        let label = DomainLabel::from_one_hot(one_hot)?;
        let Some(embed) = &self.decoder.embed else {
            return validation_err("generator is not label-conditioned");
        };
        let dtype = self.dtype();
        let z = one_hot_batch(&[label], dtype, &Device::Cpu)?;
        let e = embed.forward(&z)?;
        let d = e.dim(1)?;
        let map = e
            .reshape((1, d, 1, 1))?
            .broadcast_as((1, d, spatial.0, spatial.1))?
            .contiguous()?;
        ImageTensor::feature_map(map)
    }

    fn dtype(&self) -> DType {
        self.encoder
            .params
            .named()
            .next()
            .map(|(_, v)| v.dtype())
            .unwrap_or(DType::F32)
    }

    /// Runs the generator; gradients flow to parameters and to `x`.
    pub fn forward(&self, x: &Tensor, guidance: &Guidance) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4().map_err(|_| {
            Error::Shape(format!("generator input must be rank 4, got {:?}", x.dims()))
        })?;
        if c != self.image_channels {
            return shape_err(format!(
                "generator expects {} image channels, got {c}",
                self.image_channels
            ));
        }
        if h % self.downsampling != 0 || w % self.downsampling != 0 {
            return shape_err(format!(
                "{h}x{w} input is not divisible by the downsampling factor {}",
                self.downsampling
            ));
        }
        match (&self.guidance, guidance) {
            (GuidanceSpec::DomainLabel { num_domains, .. }, Guidance::Domain(z)) => {
                if z.dims() != [n, *num_domains] {
                    return validation_err(format!(
                        "expected ({n}, {num_domains}) one-hot labels, got {:?}",
                        z.dims()
                    ));
                }
                let embed = self
                    .decoder
                    .embed
                    .as_ref()
                    .ok_or_else(|| Error::Validation("missing label embedding".into()))?;
                let label = embed.forward(&z.to_dtype(x.dtype())?)?;
                let feats = self.encoder.stack.forward(x, None)?;
                self.decoder.stack.forward(&feats, Some(&label))
            }
            (GuidanceSpec::Skeleton { channels }, Guidance::Skeleton(s)) => {
                if s.dims() != [n, *channels, h, w] {
                    return shape_err(format!(
                        "expected skeleton of shape ({n}, {channels}, {h}, {w}), got {:?}",
                        s.dims()
                    ));
                }
                let input = Tensor::cat(&[x, &s.to_dtype(x.dtype())?], 1)?;
                let feats = self.encoder.stack.forward(&input, None)?;
                self.decoder.stack.forward(&feats, None)
            }
            _ => validation_err("guidance kind does not match the generator spec"),
        }
    }

    /// Convenience wrapper over [`Generator::forward`] for validated images.
    pub fn translate(&self, x: &ImageTensor, guidance: &Guidance) -> Result<ImageTensor> {
        ImageTensor::new(self.forward(x.tensor(), guidance)?)
    }
}

/// Both generators plus the parameter-set partition used by the optimisers.
#[derive(Debug, Clone)]
pub struct GeneratorPair {
    pub spec: GeneratorPairSpec,
    pub image_channels: usize,
    pub image_size: usize,
    pub translate: Generator,
    pub reconstruct: Generator,
    shared: ParamSet,
    translate_own: ParamSet,
    reconstruct_own: ParamSet,
}

fn sub_seed(seed: u64, role: u64) -> u64 {
    seed.wrapping_mul(0x5851_F42D_4C95_7F2D).wrapping_add(role.wrapping_mul(0x1405_7B7E_F767_814F))
}

fn merge(sets: &[&ParamSet]) -> ParamSet {
    ParamSet::concat(sets)
}

struct PartBuilder<'a> {
    spec: &'a GeneratorPairSpec,
    io: ArchIo,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl PartBuilder<'_> {
    fn encoder(&self, layout: &ArchLayout, prefix: &str, role: u64) -> Result<(Arc<Encoder>, usize)> {
        let mut pb = ParamBuilder::new(sub_seed(self.seed, role), self.dtype, &self.device);
        let (stack, channels) =
            Stack::build(&mut pb, &format!("{prefix}.encoder"), &layout.encoder, self.io.in_channels, 0)?;
        Ok((
            Arc::new(Encoder {
                stack,
                params: pb.finish(),
            }),
            channels,
        ))
    }

    fn decoder(&self, layout: &ArchLayout, prefix: &str, role: u64, channels: usize) -> Result<Arc<Decoder>> {
        let mut pb = ParamBuilder::new(sub_seed(self.seed, role), self.dtype, &self.device);
        let embed = match self.spec.guidance {
            GuidanceSpec::DomainLabel {
                num_domains,
                embed_dim,
            } => Some(Dense::new(&mut pb, &format!("{prefix}.label_embed"), num_domains, embed_dim)?),
            GuidanceSpec::Skeleton { .. } => None,
        };
        let label_dim = self.io.label_embed.unwrap_or(0);
        let (stack, out) =
            Stack::build(&mut pb, &format!("{prefix}.decoder"), &layout.decoder, channels, label_dim)?;
        if out != self.io.out_channels {
            return Err(Error::Spec(format!(
                "layout emits {out} channels, expected {}",
                self.io.out_channels
            )));
        }
        Ok(Arc::new(Decoder {
            embed,
            stack,
            params: pb.finish(),
        }))
    }
}

/// Builds both generators with the default registry and `f32` parameters.
pub fn build_pair(
    spec: &GeneratorPairSpec,
    image_channels: usize,
    image_size: usize,
    seed: u64,
) -> Result<GeneratorPair> {
    build_pair_with(&ArchRegistry::default(), spec, image_channels, image_size, seed, DType::F32)
}

/// Builds the pair, sharing parameter storage according to its sharing mode.
pub fn build_pair_with(
    registry: &ArchRegistry,
    spec: &GeneratorPairSpec,
    image_channels: usize,
    image_size: usize,
    seed: u64,
    dtype: DType,
) -> Result<GeneratorPair> {
    spec.validate(registry, image_channels)?;
    let io = spec.arch_io(image_channels);
    let t_layout = registry.resolve(&spec.translate_arch)?.layout(&io);
    let r_layout = registry.resolve(&spec.reconstruct_arch)?.layout(&io);
    for layout in [&t_layout, &r_layout] {
        if image_size == 0 || image_size % layout.downsampling != 0 {
            return shape_err(format!(
                "image size {image_size} is not divisible by the downsampling factor {}",
                layout.downsampling
            ));
        }
    }
    let parts = PartBuilder {
        spec,
        io,
        dtype,
        device: Device::Cpu,
        seed,
    };
    let (t_enc, r_enc, t_dec, r_dec) = match spec.sharing {
        SharingMode::Full => {
            let (enc, ch) = parts.encoder(&t_layout, "shared", 0)?;
            let dec = parts.decoder(&t_layout, "shared", 1, ch)?;
            (enc.clone(), enc, dec.clone(), dec)
        }
        SharingMode::PartialEncoder => {
            let (enc, ch) = parts.encoder(&t_layout, "shared", 0)?;
            let t_dec = parts.decoder(&t_layout, "translate", 2, ch)?;
            let r_dec = parts.decoder(&r_layout, "reconstruct", 3, ch)?;
            (enc.clone(), enc, t_dec, r_dec)
        }
        SharingMode::None => {
            let (t_enc, t_ch) = parts.encoder(&t_layout, "translate", 4)?;
            let (r_enc, r_ch) = parts.encoder(&r_layout, "reconstruct", 5)?;
            let t_dec = parts.decoder(&t_layout, "translate", 2, t_ch)?;
            let r_dec = parts.decoder(&r_layout, "reconstruct", 3, r_ch)?;
            (t_enc, r_enc, t_dec, r_dec)
        }
    };
    let (shared, translate_own, reconstruct_own) = match spec.sharing {
        SharingMode::Full => (
            merge(&[&t_enc.params, &t_dec.params]),
            ParamSet::default(),
            ParamSet::default(),
        ),
        SharingMode::PartialEncoder => (t_enc.params.clone(), t_dec.params.clone(), r_dec.params.clone()),
        SharingMode::None => (
            ParamSet::default(),
            merge(&[&t_enc.params, &t_dec.params]),
            merge(&[&r_enc.params, &r_dec.params]),
        ),
    };
    let mk = |arch: ArchTier, layout: &ArchLayout, encoder: Arc<Encoder>, decoder: Arc<Decoder>| Generator {
        arch,
        guidance: spec.guidance,
        image_channels,
        downsampling: layout.downsampling,
        encoder,
        decoder,
    };
    Ok(GeneratorPair {
        spec: *spec,
        image_channels,
        image_size,
        translate: mk(spec.translate_arch, &t_layout, t_enc, t_dec),
        reconstruct: mk(spec.reconstruct_arch, &r_layout, r_enc, r_dec),
        shared,
        translate_own,
        reconstruct_own,
    })
}

impl GeneratorPair {
    /// Scalar parameters across the pair, each shared tensor counted once.
    pub fn count_parameters(&self) -> usize {
        self.shared.count() + self.translate_own.count() + self.reconstruct_own.count()
    }

    pub fn shared_params(&self) -> &ParamSet {
        &self.shared
    }

    /// Parameters updated by the translation sub-update: its own plus anything shared.
    pub fn translate_update_params(&self) -> ParamSet {
        merge(&[&self.shared, &self.translate_own])
    }

    /// Parameters updated by the reconstruction sub-update; shared tensors are excluded.
    pub fn reconstruct_update_params(&self) -> &ParamSet {
        &self.reconstruct_own
    }

    pub fn all_params(&self) -> ParamSet {
        merge(&[&self.shared, &self.translate_own, &self.reconstruct_own])
    }
}
