//! Optimisation protocol: per-step update ordering for both tasks, the
//! replay buffer, the epoch loop and its JSONL log.

mod buffer;
mod runner;
mod sup;
mod unsup;

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

pub use buffer::ReplayBuffer;
pub use runner::{load_paired_tensors, load_unpaired_tensors, train_loop, JsonlLogger, TrainCallback, TrainOutcome};
pub use sup::{PairedBatch, SupTrainer};
pub use unsup::UnsupTrainer;

use crate::discriminators::{build_discriminator_with, Discriminator, DiscriminatorSpec};
use crate::error::{Error, Result};
use crate::generators::{build_pair_with, ArchRegistry, GeneratorPair, GeneratorPairSpec};
use crate::losses::LossWeights;
use crate::nn::ParamSet;

/// Hyper-parameters; serialised as a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub buffer_capacity: usize,
    pub loss_weights: LossWeights,
    pub dual_discriminator: bool,
    pub seed: u64,
    /// Linear decay to zero over the second half of the epochs.
    pub lr_decay: bool,
    /// Stop after this many steps regardless of `epochs`.
    pub max_steps: Option<usize>,
    /// Checkpoint cadence in epochs; a final checkpoint is always written.
    pub checkpoint_every: usize,
    /// Resize images to this side length; defaults to the manifest's size.
    pub image_size: Option<usize>,
    /// Registered extractor used by the perceptual term.
    pub perceptual_extractor: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::unsupervised()
    }
}

impl TrainConfig {
    pub fn unsupervised() -> Self {
        Self {
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 1,
            epochs: 200,
            buffer_capacity: 50,
            loss_weights: LossWeights::default(),
            dual_discriminator: false,
            seed: 0,
            lr_decay: false,
            max_steps: None,
            checkpoint_every: 10,
            image_size: None,
            perceptual_extractor: "random-conv".into(),
        }
    }

    pub fn supervised() -> Self {
        Self {
            batch_size: 4,
            epochs: 20,
            ..Self::unsupervised()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Validation("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Validation("checkpoint_every must be at least 1".into()));
        }
        self.loss_weights.validate()
    }

    /// Learning rate in effect during `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if !self.lr_decay || self.epochs < 2 {
            return self.learning_rate;
        }
        let half = self.epochs / 2;
        if epoch < half {
            return self.learning_rate;
        }
        let span = (self.epochs - half) as f64;
        self.learning_rate * (1.0 - (epoch - half) as f64 / span)
    }
}

/// Architecture of every model a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpecs {
    pub generators: GeneratorPairSpec,
    pub discriminator: DiscriminatorSpec,
}

/// The generator pair and discriminator a trainer owns.
#[derive(Debug, Clone)]
pub struct Models {
    pub pair: GeneratorPair,
    pub disc: Discriminator,
}

impl Models {
    /// Builds every model from one seed; `dual` forces the two-scale discriminator.
    pub fn build(specs: &ModelSpecs, image_channels: usize, image_size: usize, seed: u64, dual: bool) -> Result<Self> {
        let pair = build_pair_with(
            &ArchRegistry::default(),
            &specs.generators,
            image_channels,
            image_size,
            seed,
            DType::F32,
        )?;
        let dspec = specs.discriminator.with_dual(specs.discriminator.dual || dual);
        let disc = build_discriminator_with(&dspec, image_size, seed ^ 0xD15C, DType::F32, &Device::Cpu)?;
        Ok(Self { pair, disc })
    }
}

/// Scalar loss components of one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub epoch: usize,
    /// Seconds spent in the step.
    pub wall_time: f64,
    #[serde(flatten)]
    pub losses: BTreeMap<String, f64>,
}

impl StepReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.losses.get(key).copied()
    }
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Records `value` under `name`, failing on non-finite values.
pub(crate) fn record(out: &mut BTreeMap<String, f64>, name: &str, t: &Tensor) -> Result<f64> {
    let v = scalar(t)?;
    record_value(out, name, v)
}

pub(crate) fn record_value(out: &mut BTreeMap<String, f64>, name: &str, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::Training {
            component: name.to_string(),
            message: format!("value is {v}"),
        });
    }
    out.insert(name.to_string(), v);
    Ok(v)
}

/// Adam over one parameter set; `None` when the set is empty.
pub(crate) struct SetOptimizer {
    params: ParamSet,
    opt: Option<AdamW>,
}

impl SetOptimizer {
    pub(crate) fn new(params: ParamSet, cfg: &TrainConfig) -> Result<Self> {
        let opt = if params.is_empty() {
            None
        } else {
            Some(AdamW::new(
                params.vars(),
                ParamsAdamW {
                    lr: cfg.learning_rate,
                    beta1: cfg.adam_beta1,
                    beta2: cfg.adam_beta2,
                    eps: 1e-8,
                    weight_decay: 0.0,
                },
            )?)
        };
        Ok(Self { params, opt })
    }

    pub(crate) fn is_active(&self) -> bool {
        self.opt.is_some()
    }

    pub(crate) fn set_lr(&mut self, lr: f64) {
        if let Some(o) = &mut self.opt {
            o.set_learning_rate(lr);
        }
    }

    /// Back-propagates `loss`, applies the update and returns the gradient norm
    /// over this set. A non-finite norm aborts before any parameter moves.
    pub(crate) fn minimize(&mut self, loss: &Tensor, component: &str) -> Result<f64> {
        let Some(opt) = &mut self.opt else {
            return Ok(0.0);
        };
        let grads: GradStore = loss.backward()?;
        let norm = self.params.grad_sq_norm(&grads)?.sqrt();
        if !norm.is_finite() {
            return Err(Error::Training {
                component: component.to_string(),
                message: format!("gradient norm is {norm}"),
            });
        }
        opt.step(&grads)?;
        Ok(norm)
    }
}
