//! Feature extractors shared by the perceptual loss and the Fréchet metrics.

use std::collections::BTreeMap;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// A fixed, deterministic map from image batches to features.
pub trait FeatureExtractor: Send + Sync {
    /// Identity string recorded in metric reports.
    fn name(&self) -> String;

    fn input_channels(&self) -> usize;

    /// Required `(h, w)`, when the extractor only accepts one size.
    fn input_size(&self) -> Option<(usize, usize)> {
        None
    }

    /// Width of [`FeatureExtractor::embed`] rows.
    fn feature_dim(&self) -> usize;

    /// Intermediate maps used by the perceptual loss.
    fn layers(&self, x: &Tensor) -> Result<Vec<Tensor>>;

    /// One weight per entry of [`FeatureExtractor::layers`].
    fn layer_weights(&self) -> Vec<f64>;

    /// `(batch, feature_dim)` embedding used by the Fréchet metrics.
    fn embed(&self, x: &Tensor) -> Result<Tensor>;

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != self.input_channels() {
            return shape_err(format!(
                "extractor `{}` expects (B, {}, H, W), got {dims:?}",
                self.name(),
                self.input_channels()
            ));
        }
        if let Some((h, w)) = self.input_size() {
            if dims[2] != h || dims[3] != w {
                return shape_err(format!(
                    "extractor `{}` expects {h}x{w} inputs, got {}x{}",
                    self.name(),
                    dims[2],
                    dims[3]
                ));
            }
        }
        Ok(())
    }
}

/// `phi(x) = x`, a single layer with weight 1.
#[derive(Debug, Clone)]
pub struct IdentityExtractor {
    channels: usize,
    size: (usize, usize),
}

impl IdentityExtractor {
    pub fn new(channels: usize, size: (usize, usize)) -> Self {
        Self { channels, size }
    }
}

impl FeatureExtractor for IdentityExtractor {
    fn name(&self) -> String {
        "identity".into()
    }

    fn input_channels(&self) -> usize {
        self.channels
    }

    fn input_size(&self) -> Option<(usize, usize)> {
        Some(self.size)
    }

    fn feature_dim(&self) -> usize {
        self.channels * self.size.0 * self.size.1
    }

    fn layers(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        Ok(vec![x.clone()])
    }

    fn layer_weights(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(x.flatten_from(1)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomConvConfig {
    pub seed: u64,
    pub in_channels: usize,
    /// Output width of each stride-2 3x3 stage.
    pub widths: Vec<usize>,
    pub activation: FeatureActivation,
    /// Draw weights as absolute values, which makes every stage monotone.
    pub nonnegative: bool,
}

impl Default for RandomConvConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            in_channels: 3,
            widths: vec![16, 32, 64],
            activation: FeatureActivation::Relu,
            nonnegative: false,
        }
    }
}

/// A frozen, seeded stack of stride-2 3x3 convolutions.
///
/// Every stage output is a perceptual layer (weight `1 / stages`); the
/// embedding concatenates the spatial means of all stages.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    cfg: RandomConvConfig,
    stages: Vec<(Tensor, Tensor)>,
}

impl RandomConvExtractor {
    pub fn new(cfg: RandomConvConfig, dtype: DType, device: &Device) -> Result<Self> {
        if cfg.widths.is_empty() || cfg.widths.contains(&0) || cfg.in_channels == 0 {
            return Err(Error::Spec("random-conv extractor needs positive widths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut stages = Vec::new();
        let mut c_in = cfg.in_channels;
        for &c_out in &cfg.widths {
            let fan_in = (c_in * 9) as f64;
            let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).map_err(|e| Error::Numeric(e.to_string()))?;
            let w: Vec<f64> = (0..c_out * c_in * 9)
                .map(|_| {
                    let v: f64 = dist.sample(&mut rng);
                    if cfg.nonnegative {
                        v.abs()
                    } else {
                        v
                    }
                })
                .collect();
            let b: Vec<f64> = (0..c_out).map(|_| 0.1 * dist.sample(&mut rng)).collect();
            let w = Tensor::from_vec(w, (c_out, c_in, 3, 3), device)?.to_dtype(dtype)?;
            let b = Tensor::from_vec(b, (1, c_out, 1, 1), device)?.to_dtype(dtype)?;
            stages.push((w, b));
            c_in = c_out;
        }
        Ok(Self { cfg, stages })
    }

    pub fn config(&self) -> &RandomConvConfig {
        &self.cfg
    }

    /// Raw `(weight, bias)` per stage, for independent recomputation.
    pub fn stages(&self) -> &[(Tensor, Tensor)] {
        &self.stages
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn name(&self) -> String {
        let w: Vec<String> = self.cfg.widths.iter().map(|w| w.to_string()).collect();
        format!("random-conv[seed={},widths={}]", self.cfg.seed, w.join("-"))
    }

    fn input_channels(&self) -> usize {
        self.cfg.in_channels
    }

    fn feature_dim(&self) -> usize {
        self.cfg.widths.iter().sum()
    }

    fn layers(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.stages.len());
        for (w, b) in &self.stages {
            let pre = h.conv2d(&w.to_dtype(h.dtype())?, 1, 2, 1, 1)?.broadcast_add(&b.to_dtype(h.dtype())?)?;
            h = match self.cfg.activation {
                FeatureActivation::Relu => pre.relu()?,
                FeatureActivation::Tanh => pre.tanh()?,
            };
            out.push(h.clone());
        }
        Ok(out)
    }

    fn layer_weights(&self) -> Vec<f64> {
        let n = self.stages.len() as f64;
        vec![1.0 / n; self.stages.len()]
    }

    fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = self
            .layers(x)?
            .iter()
            .map(|f| f.flatten_from(2)?.mean(D::Minus1))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Tensor::cat(&pooled, 1)?)
    }
}

/// What a registered factory receives.
#[derive(Debug, Clone)]
pub struct ExtractorParams {
    pub seed: u64,
    pub channels: usize,
    pub image_size: (usize, usize),
    pub dtype: DType,
    pub device: Device,
}

type ExtractorFactory = Arc<dyn Fn(&ExtractorParams) -> Result<Box<dyn FeatureExtractor>> + Send + Sync>;

/// Name-keyed extractor factories.
#[derive(Clone)]
pub struct ExtractorRegistry {
    factories: BTreeMap<String, ExtractorFactory>,
}

impl Default for ExtractorRegistry {
    fn default() -> Self {
        let mut reg = Self {
            factories: BTreeMap::new(),
        };
        reg.register("identity", |p| Ok(Box::new(IdentityExtractor::new(p.channels, p.image_size))));
        reg.register("random-conv", |p| {
            let cfg = RandomConvConfig {
                seed: p.seed,
                in_channels: p.channels,
                ..RandomConvConfig::default()
            };
            Ok(Box::new(RandomConvExtractor::new(cfg, p.dtype, &p.device)?))
        });
        reg
    }
}

impl ExtractorRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&ExtractorParams) -> Result<Box<dyn FeatureExtractor>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Arc::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, params: &ExtractorParams) -> Result<Box<dyn FeatureExtractor>> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| Error::Spec(format!("no feature extractor registered as `{name}`")))?;
        f(params)
    }
}
