//! Parameter storage with seeded initialisation, and the handful of layers
//! the generators and discriminators are assembled from.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Standard deviation of the Gaussian weight initialisation.
pub const INIT_STD: f64 = 0.02;

const NORM_EPS: f64 = 1e-5;

/// Creates named parameters from a seeded Gaussian stream.
pub struct ParamBuilder {
    rng: ChaCha8Rng,
    vars: Vec<(String, Var)>,
    device: Device,
    dtype: DType,
    std: f64,
}

impl ParamBuilder {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            vars: Vec::new(),
            device: device.clone(),
            dtype,
            std: INIT_STD,
        }
    }

    pub fn with_std(mut self, std: f64) -> Self {
        self.std = std;
        self
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn push(&mut self, name: &str, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.push((name.to_string(), var));
        Ok(out)
    }

    /// Gaussian-initialised parameter with the builder's standard deviation.
    pub fn normal(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.normal_with_std(name, shape, self.std)
    }

    pub fn normal_with_std(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Numeric(e.to_string()))?;
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.push(name, data, shape)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.push(name, vec![0.0; n], shape)
    }

    pub fn finish(self) -> ParamSet {
        ParamSet { vars: self.vars }
    }
}

/// An ordered, named collection of trainable variables.
///
/// Cloning is cheap and clones alias the same storage.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    vars: Vec<(String, Var)>,
}

impl ParamSet {
    pub fn count(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn concat(sets: &[&ParamSet]) -> ParamSet {
        ParamSet {
            vars: sets.iter().flat_map(|s| s.vars.iter().cloned()).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), v))
    }

    /// Copy of every value, in declaration order, for snapshot/diff audits.
    pub fn snapshot(&self) -> Result<Vec<Vec<f64>>> {
        self.vars
            .iter()
            .map(|(_, v)| Ok(v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?))
            .collect()
    }

    pub fn tensors(&self, prefix: &str) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(n, v)| (format!("{prefix}{n}"), v.as_tensor().clone()))
            .collect()
    }

    /// Overwrites values from `tensors[prefix + name]`; every name must be present.
    pub fn load(&self, prefix: &str, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (n, v) in &self.vars {
            let key = format!("{prefix}{n}");
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::Spec(format!("checkpoint is missing parameter `{key}`")))?;
            if t.dims() != v.dims() {
                return Err(Error::Spec(format!(
                    "parameter `{key}` has shape {:?} in checkpoint, {:?} in model",
                    t.dims(),
                    v.dims()
                )));
            }
            v.set(&t.to_dtype(v.dtype())?.to_device(v.device())?)?;
        }
        Ok(())
    }

    /// Sum of squared gradient entries over this set's variables present in `grads`.
    pub fn grad_sq_norm(&self, grads: &candle_core::backprop::GradStore) -> Result<f64> {
        let mut acc = 0.0;
        for (_, v) in &self.vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                acc += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
            }
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::Identity => x.clone(),
            Activation::Relu => x.relu()?,
            Activation::LeakyRelu(slope) => {
                let neg = (x.minimum(0.0)? * slope)?;
                (x.relu()? + neg)?
            }
            Activation::Tanh => x.tanh()?,
        })
    }
}

/// Per-sample, per-channel normalisation over the spatial axes, without affine terms.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let flat = x.reshape((n, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centred = flat.broadcast_sub(&mean)?;
    let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
    let out = centred.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
    Ok(out.reshape((n, c, h, w))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Convolution (optionally transposed) with bias, optional instance norm and an activation.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    weight: Tensor,
    bias: Tensor,
    geom: ConvGeom,
    output_padding: usize,
    transposed: bool,
    norm: bool,
    act: Activation,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        pb: &mut ParamBuilder,
        name: &str,
        c_in: usize,
        c_out: usize,
        geom: ConvGeom,
        norm: bool,
        act: Activation,
    ) -> Result<Self> {
        let weight = pb.normal(&format!("{name}.weight"), &[c_out, c_in, geom.kernel, geom.kernel])?;
        let bias = pb.zeros(&format!("{name}.bias"), &[c_out])?;
        Ok(Self {
            weight,
            bias,
            geom,
            output_padding: 0,
            transposed: false,
            norm,
            act,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose(
        pb: &mut ParamBuilder,
        name: &str,
        c_in: usize,
        c_out: usize,
        geom: ConvGeom,
        output_padding: usize,
        norm: bool,
        act: Activation,
    ) -> Result<Self> {
        let weight = pb.normal(&format!("{name}.weight"), &[c_in, c_out, geom.kernel, geom.kernel])?;
        let bias = pb.zeros(&format!("{name}.bias"), &[c_out])?;
        Ok(Self {
            weight,
            bias,
            geom,
            output_padding,
            transposed: true,
            norm,
            act,
        })
    }

    pub fn geom(&self) -> ConvGeom {
        self.geom
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let ConvGeom { stride, padding, .. } = self.geom;
        let y = if self.transposed {
            x.conv_transpose2d(&self.weight, padding, self.output_padding, stride, 1)?
        } else {
            x.conv2d(&self.weight, padding, stride, 1, 1)?
        };
        let y = y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?;
        let y = if self.norm { instance_norm(&y)? } else { y };
        self.act.apply(&y)
    }
}

/// Two same-width 3x3 convolutions with instance norm and an identity skip.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    first: ConvUnit,
    second: ConvUnit,
}

impl ResidualBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize) -> Result<Self> {
        let geom = ConvGeom {
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        Ok(Self {
            first: ConvUnit::conv(pb, &format!("{name}.conv1"), channels, channels, geom, true, Activation::Relu)?,
            second: ConvUnit::conv(pb, &format!("{name}.conv2"), channels, channels, geom, true, Activation::Identity)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.second.forward(&self.first.forward(x)?)?;
        Ok((x + h)?)
    }
}

/// Fully connected layer `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
}

impl Dense {
    pub fn new(pb: &mut ParamBuilder, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.normal(&format!("{name}.weight"), &[d_out, d_in])?,
            bias: pb.zeros(&format!("{name}.bias"), &[d_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}
