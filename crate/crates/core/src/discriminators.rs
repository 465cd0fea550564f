//! PatchGAN discriminators.
//!
//! The multidomain kind scores single images and carries an auxiliary
//! domain classifier; the triplet kind scores `(x, l, y)` channel stacks.
//! In dual mode a second, identically shaped network sees the input at half
//! resolution.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Activation, ConvGeom, ConvUnit, ParamBuilder, ParamSet};

const SLOPE: f64 = 0.2;
const MAX_WIDTH_MULT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscriminatorKind {
    Multidomain {
        num_domains: usize,
        #[serde(default = "default_channels")]
        image_channels: usize,
    },
    Triplet {
        image_channels: usize,
        skeleton_channels: usize,
    },
}

fn default_channels() -> usize {
    3
}

fn default_base_width() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub kind: DiscriminatorKind,
    #[serde(default = "default_base_width")]
    pub base_width: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub dual: bool,
}

impl DiscriminatorSpec {
    /// Auxiliary-classifier PatchGAN over 3-channel images.
    pub fn multidomain(num_domains: usize, n_layers: usize) -> Self {
        Self {
            kind: DiscriminatorKind::Multidomain {
                num_domains,
                image_channels: 3,
            },
            base_width: 64,
            n_layers,
            dual: false,
        }
    }

    /// 70x70 PatchGAN over `(image, skeleton, image)` stacks.
    pub fn triplet(image_channels: usize, skeleton_channels: usize) -> Self {
        Self {
            kind: DiscriminatorKind::Triplet {
                image_channels,
                skeleton_channels,
            },
            base_width: 64,
            n_layers: 3,
            dual: false,
        }
    }

    pub fn with_base_width(mut self, w: usize) -> Self {
        self.base_width = w;
        self
    }

    pub fn with_dual(mut self, dual: bool) -> Self {
        self.dual = dual;
        self
    }

    pub fn input_channels(&self) -> usize {
        match self.kind {
            DiscriminatorKind::Multidomain { image_channels, .. } => image_channels,
            DiscriminatorKind::Triplet {
                image_channels,
                skeleton_channels,
            } => 2 * image_channels + skeleton_channels,
        }
    }

    pub fn num_domains(&self) -> Option<usize> {
        match self.kind {
            DiscriminatorKind::Multidomain { num_domains, .. } => Some(num_domains),
            DiscriminatorKind::Triplet { .. } => None,
        }
    }

    fn width(&self, i: usize) -> usize {
        self.base_width * (1usize << i.min(3)).min(MAX_WIDTH_MULT)
    }

    /// `(kernel, stride)` of every layer on the path to one `src_map` unit.
    pub fn geometry(&self) -> Vec<(usize, usize)> {
        let mut g = vec![(4, 2); self.n_layers];
        match self.kind {
            DiscriminatorKind::Multidomain { .. } => g.push((3, 1)),
            DiscriminatorKind::Triplet { .. } => g.extend([(4, 1), (4, 1)]),
        }
        g
    }

    /// Side length of the square input patch one `src_map` unit sees.
    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.geometry())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Spec("discriminator needs n_layers >= 1".into()));
        }
        if self.base_width == 0 {
            return Err(Error::Spec("discriminator needs base_width >= 1".into()));
        }
        match self.kind {
            DiscriminatorKind::Multidomain {
                num_domains,
                image_channels,
            } => {
                if num_domains < 2 {
                    return Err(Error::Spec(format!(
                        "multidomain discriminator needs at least 2 domains, got {num_domains}"
                    )));
                }
                if image_channels == 0 {
                    return Err(Error::Spec("image_channels must be positive".into()));
                }
            }
            DiscriminatorKind::Triplet {
                image_channels,
                skeleton_channels,
            } => {
                if image_channels == 0 || skeleton_channels == 0 {
                    return Err(Error::Spec("triplet channels must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Spatial side of `src_map` for a square input of side `size`, if positive.
    pub fn src_map_size(&self, size: usize) -> Option<usize> {
        let mut s = size as isize;
        // every layer pads by one
        for (k, stride) in self.geometry() {
            s = (s + 2 - k as isize).div_euclid(stride as isize) + 1;
            if s < 1 {
                return None;
            }
        }
        Some(s as usize)
    }
}

/// Receptive field of a conv stack given `(kernel, stride)` per layer.
pub fn receptive_field(layers: &[(usize, usize)]) -> usize {
    let mut rf = 1;
    let mut jump = 1;
    for &(k, s) in layers {
        rf += (k - 1) * jump;
        jump *= s;
    }
    rf
}

#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    /// Raw patch realism scores, `(batch, 1, h', w')`.
    pub src_map: Tensor,
    /// Domain logits `(batch, m)`; multidomain kind only.
    pub class_logits: Option<Tensor>,
}

#[derive(Debug, Clone)]
struct PatchNet {
    trunk: Vec<ConvUnit>,
    src_head: ConvUnit,
    cls_head: Option<ConvUnit>,
    input_size: usize,
}

impl PatchNet {
    fn build(pb: &mut ParamBuilder, prefix: &str, spec: &DiscriminatorSpec, input_size: usize) -> Result<Self> {
        let down = ConvGeom {
            kernel: 4,
            stride: 2,
            padding: 1,
        };
        let mut trunk = Vec::new();
        let mut c_in = spec.input_channels();
        for i in 0..spec.n_layers {
            let c_out = spec.width(i);
            trunk.push(ConvUnit::conv(
                pb,
                &format!("{prefix}.trunk{i}"),
                c_in,
                c_out,
                down,
                i > 0,
                Activation::LeakyRelu(SLOPE),
            )?);
            c_in = c_out;
        }
        let (src_head, cls_head) = match spec.kind {
            DiscriminatorKind::Multidomain { num_domains, .. } => {
                let head = ConvGeom {
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                };
                let src = ConvUnit::conv(pb, &format!("{prefix}.src"), c_in, 1, head, false, Activation::Identity)?;
                let side = input_size >> spec.n_layers;
                let global = ConvGeom {
                    kernel: side,
                    stride: 1,
                    padding: 0,
                };
                let cls = ConvUnit::conv(
                    pb,
                    &format!("{prefix}.cls"),
                    c_in,
                    num_domains,
                    global,
                    false,
                    Activation::Identity,
                )?;
                (src, Some(cls))
            }
            DiscriminatorKind::Triplet { .. } => {
                let geom = ConvGeom {
                    kernel: 4,
                    stride: 1,
                    padding: 1,
                };
                let c_out = spec.width(spec.n_layers);
                trunk.push(ConvUnit::conv(
                    pb,
                    &format!("{prefix}.trunk{}", spec.n_layers),
                    c_in,
                    c_out,
                    geom,
                    true,
                    Activation::LeakyRelu(SLOPE),
                )?);
                let src = ConvUnit::conv(pb, &format!("{prefix}.src"), c_out, 1, geom, false, Activation::Identity)?;
                (src, None)
            }
        };
        Ok(Self {
            trunk,
            src_head,
            cls_head,
            input_size,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<DiscriminatorOutput> {
        let mut h = x.clone();
        for layer in &self.trunk {
            h = layer.forward(&h)?;
        }
        let src_map = self.src_head.forward(&h)?;
        let class_logits = match &self.cls_head {
            Some(head) => Some(head.forward(&h)?.flatten_from(1)?),
            None => None,
        };
        Ok(DiscriminatorOutput { src_map, class_logits })
    }
}

/// One PatchGAN, or a full/half-resolution pair in dual mode.
#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    image_size: usize,
    nets: Vec<PatchNet>,
    params: ParamSet,
}

pub fn build_discriminator(spec: &DiscriminatorSpec, image_size: usize, seed: u64) -> Result<Discriminator> {
    build_discriminator_with(spec, image_size, seed, DType::F32, &Device::Cpu)
}

pub fn build_discriminator_with(
    spec: &DiscriminatorSpec,
    image_size: usize,
    seed: u64,
    dtype: DType,
    device: &Device,
) -> Result<Discriminator> {
    spec.validate()?;
    let sizes: Vec<usize> = if spec.dual {
        vec![image_size, image_size / 2]
    } else {
        vec![image_size]
    };
    if spec.dual && image_size % 2 != 0 {
        return Err(Error::Spec(format!("dual mode needs an even image size, got {image_size}")));
    }
    for &s in &sizes {
        let ok = match spec.kind {
            DiscriminatorKind::Multidomain { .. } => s % (1 << spec.n_layers) == 0 && s >> spec.n_layers >= 1,
            DiscriminatorKind::Triplet { .. } => spec.src_map_size(s).is_some(),
        };
        if !ok {
            return Err(Error::Spec(format!(
                "input size {s} is incompatible with {} downsampling layers",
                spec.n_layers
            )));
        }
    }
    let mut pb = ParamBuilder::new(seed, dtype, device);
    let nets = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| PatchNet::build(&mut pb, &format!("d{i}"), spec, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Discriminator {
        spec: *spec,
        image_size,
        nets,
        params: pb.finish(),
    })
}

impl Discriminator {
    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    pub fn num_scales(&self) -> usize {
        self.nets.len()
    }

    fn run(&self, x: &Tensor) -> Result<Vec<DiscriminatorOutput>> {
        let mut outs = Vec::with_capacity(self.nets.len());
        let mut input = x.clone();
        for (i, net) in self.nets.iter().enumerate() {
            if i > 0 {
                input = input.avg_pool2d(2)?;
            }
            debug_assert_eq!(input.dim(2)?, net.input_size);
            outs.push(net.forward(&input)?);
        }
        Ok(outs)
    }

    fn check_image(&self, x: &Tensor, channels: usize, what: &str) -> Result<()> {
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != channels || dims[2] != self.image_size || dims[3] != self.image_size {
            return shape_err(format!(
                "{what}: expected (B, {channels}, {s}, {s}), got {dims:?}",
                s = self.image_size
            ));
        }
        Ok(())
    }

    /// Scores single images; one output per scale.
    pub fn forward_multidomain(&self, x: &Tensor) -> Result<Vec<DiscriminatorOutput>> {
        let DiscriminatorKind::Multidomain { image_channels, .. } = self.spec.kind else {
            return Err(Error::Validation("forward_multidomain called on a triplet discriminator".into()));
        };
        self.check_image(x, image_channels, "discriminator input")?;
        self.run(x)
    }

    /// Scores `(x, l, y)` stacks; one output per scale.
    pub fn forward_triplet(&self, x: &Tensor, l: &Tensor, y: &Tensor) -> Result<Vec<DiscriminatorOutput>> {
        let DiscriminatorKind::Triplet {
            image_channels,
            skeleton_channels,
        } = self.spec.kind
        else {
            return Err(Error::Validation("forward_triplet called on a multidomain discriminator".into()));
        };
        self.check_image(x, image_channels, "triplet source")?;
        self.check_image(l, skeleton_channels, "triplet skeleton")?;
        self.check_image(y, image_channels, "triplet target")?;
        if x.dim(0)? != l.dim(0)? || x.dim(0)? != y.dim(0)? {
            return shape_err("triplet members have different batch sizes");
        }
        self.run(&Tensor::cat(&[x, l, y], 1)?)
    }
}
