use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{record, record_value, Models, ReplayBuffer, SetOptimizer, StepReport, TrainConfig};
use crate::datamodel::DomainLabel;
use crate::discriminators::DiscriminatorOutput;
use crate::error::{Error, Result};
use crate::generators::{Guidance, SharingMode};
use crate::losses::{
    color_cycle, cycle_l1, domain_cls, full_unsup, identity_unsup, lsgan_d, lsgan_g, msssim_loss, SsimConfig,
    UnsupTerms,
};

pub(crate) fn mean_of(values: Vec<Tensor>) -> Result<Tensor> {
    let n = values.len();
    let mut it = values.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::Validation("discriminator produced no outputs".into()))?;
    let sum = it.try_fold(first, |a, v| a + v)?;
    Ok((sum / n as f64)?)
}

/// Averages a per-scale loss over the discriminator's scales.
pub(crate) fn mean_over_scales(
    outs: &[DiscriminatorOutput],
    f: impl Fn(&DiscriminatorOutput) -> Result<Tensor>,
) -> Result<Tensor> {
    mean_of(outs.iter().map(f).collect::<Result<Vec<_>>>()?)
}

fn logits(o: &DiscriminatorOutput) -> Result<&Tensor> {
    o.class_logits
        .as_ref()
        .ok_or_else(|| Error::Validation("discriminator has no classification head".into()))
}

/// Unpaired multi-domain training: discriminator, then `G^t`, then `G^r`.
pub struct UnsupTrainer {
    models: Models,
    cfg: TrainConfig,
    ssim: SsimConfig,
    buffer: ReplayBuffer,
    opt_d: SetOptimizer,
    opt_t: SetOptimizer,
    opt_r: SetOptimizer,
    rng: ChaCha8Rng,
    num_domains: usize,
    step: usize,
}

impl UnsupTrainer {
    pub fn new(models: Models, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let num_domains = models
            .disc
            .spec()
            .num_domains()
            .ok_or_else(|| Error::Validation("unpaired training needs a multidomain discriminator".into()))?;
        let opt_d = SetOptimizer::new(models.disc.params().clone(), cfg)?;
        let opt_t = SetOptimizer::new(models.pair.translate_update_params(), cfg)?;
        let opt_r = SetOptimizer::new(models.pair.reconstruct_update_params().clone(), cfg)?;
        Ok(Self {
            ssim: SsimConfig::default(),
            buffer: ReplayBuffer::new(cfg.buffer_capacity, cfg.seed ^ 0xB0FF),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7A46),
            cfg: cfg.clone(),
            models,
            opt_d,
            opt_t,
            opt_r,
            num_domains,
            step: 0,
        })
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        for o in [&mut self.opt_d, &mut self.opt_t, &mut self.opt_r] {
            o.set_lr(lr);
        }
    }

    /// Draws each target uniformly from the domains other than its source.
    pub fn sample_targets(&mut self, source: &[DomainLabel]) -> Result<Vec<DomainLabel>> {
        source
            .iter()
            .map(|s| {
                let k = self.rng.random_range(0..self.num_domains - 1);
                let k = if k >= s.index() { k + 1 } else { k };
                DomainLabel::new(k, self.num_domains)
            })
            .collect()
    }

    fn guidance(&self, labels: &[DomainLabel], like: &Tensor) -> Result<Guidance> {
        Guidance::domains(labels, like.dtype(), like.device())
    }

    /// Discriminator update on real images against (replayed) translations.
    pub fn discriminator_step(
        &mut self,
        x: &Tensor,
        source: &[DomainLabel],
        target: &[DomainLabel],
    ) -> Result<BTreeMap<String, f64>> {
        let w = self.cfg.loss_weights.unsupervised;
        let zt = self.guidance(target, x)?;
        let fake = self.models.pair.translate.forward(x, &zt)?.detach();
        let fake = self.buffer.query_batch(&fake)?;
        let real_out = self.models.disc.forward_multidomain(x)?;
        let fake_out = self.models.disc.forward_multidomain(&fake)?;
        let adv = mean_of(
            real_out
                .iter()
                .zip(&fake_out)
                .map(|(r, f)| lsgan_d(&r.src_map, &f.src_map))
                .collect::<Result<Vec<_>>>()?,
        )?;
        let cls = mean_over_scales(&real_out, |o| domain_cls(logits(o)?, source))?;
        let total = (&adv + (&cls * w.lambda_c)?)?;
        let mut out = BTreeMap::new();
        record(&mut out, "d_adv", &adv)?;
        record(&mut out, "d_cls", &cls)?;
        record(&mut out, "d_total", &total)?;
        let g = self.opt_d.minimize(&total, "grad_norm_d")?;
        record_value(&mut out, "grad_norm_d", g)?;
        Ok(out)
    }

    /// `G^t` update through the full translation-reconstruction chain.
    ///
    /// Returns the loss components and the detached translation.
    pub fn translation_step(
        &mut self,
        x: &Tensor,
        source: &[DomainLabel],
        target: &[DomainLabel],
    ) -> Result<(BTreeMap<String, f64>, Tensor)> {
        let w = self.cfg.loss_weights.unsupervised;
        let zs = self.guidance(source, x)?;
        let zt = self.guidance(target, x)?;
        let pair = &self.models.pair;
        let y = pair.translate.forward(x, &zt)?;
        let outs = self.models.disc.forward_multidomain(&y)?;
        let adv = mean_over_scales(&outs, |o| lsgan_g(&o.src_map))?;
        let cls = mean_over_scales(&outs, |o| domain_cls(logits(o)?, target))?;
        let x_hat = pair.reconstruct.forward(&y, &zs)?;
        let colorcyc = color_cycle(&x_hat, x)?;
        let ms = msssim_loss(&x_hat, x, &self.ssim)?;
        // the reconstruction step owns nothing under full sharing, so the
        // identity term is folded in here
        let id = if pair.spec.sharing == SharingMode::Full {
            identity_unsup(&pair.reconstruct.forward(x, &zs)?, x)?
        } else {
            Tensor::zeros((), x.dtype(), x.device())?
        };
        let terms = UnsupTerms {
            lsgan: adv,
            cls,
            colorcyc,
            msssim_loss: ms,
            id,
        };
        let total = full_unsup(&terms, &w)?;
        let mut out = BTreeMap::new();
        record(&mut out, "g_adv", &terms.lsgan)?;
        record(&mut out, "g_cls", &terms.cls)?;
        record(&mut out, "color_cycle", &terms.colorcyc)?;
        record(&mut out, "msssim_loss", &terms.msssim_loss)?;
        record(&mut out, "cycle_l1", &cycle_l1(&x_hat, x)?)?;
        record(&mut out, "g_total", &total)?;
        let g = self.opt_t.minimize(&total, "grad_norm_t")?;
        record_value(&mut out, "grad_norm_t", g)?;
        Ok((out, y.detach()))
    }

    /// `G^r` update: reconstruction from the detached translation plus identity.
    pub fn reconstruction_step(
        &mut self,
        x: &Tensor,
        y: &Tensor,
        source: &[DomainLabel],
    ) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        if !self.opt_r.is_active() {
            for k in ["r_cycle", "r_identity", "r_total", "grad_norm_r"] {
                out.insert(k.to_string(), 0.0);
            }
            return Ok(out);
        }
        let w = self.cfg.loss_weights.unsupervised;
        let zs = self.guidance(source, x)?;
        let g_r = &self.models.pair.reconstruct;
        let x_hat = g_r.forward(&y.detach(), &zs)?;
        let cyc = ((color_cycle(&x_hat, x)? * w.lambda_cyc)? + (msssim_loss(&x_hat, x, &self.ssim)? * w.lambda_m)?)?;
        let id = identity_unsup(&g_r.forward(x, &zs)?, x)?;
        let total = (&cyc + (&id * w.lambda_id)?)?;
        record(&mut out, "r_cycle", &cyc)?;
        record(&mut out, "r_identity", &id)?;
        record(&mut out, "r_total", &total)?;
        let g = self.opt_r.minimize(&total, "grad_norm_r")?;
        record_value(&mut out, "grad_norm_r", g)?;
        Ok(out)
    }

    /// One full step with explicit targets.
    pub fn step_with_targets(
        &mut self,
        x: &Tensor,
        source: &[DomainLabel],
        target: &[DomainLabel],
        epoch: usize,
    ) -> Result<StepReport> {
        if source.len() != x.dim(0)? || target.len() != source.len() {
            return Err(Error::Shape(format!(
                "batch of {} images with {} source and {} target labels",
                x.dim(0)?,
                source.len(),
                target.len()
            )));
        }
        if source.iter().zip(target).any(|(s, t)| s.index() == t.index()) {
            return Err(Error::Validation("target domain must differ from the source domain".into()));
        }
        let start = Instant::now();
        let mut losses = self.discriminator_step(x, source, target)?;
        let (t, y) = self.translation_step(x, source, target)?;
        losses.extend(t);
        losses.extend(self.reconstruction_step(x, &y, source)?);
        let report = StepReport {
            step: self.step,
            epoch,
            wall_time: start.elapsed().as_secs_f64(),
            losses,
        };
        self.step += 1;
        Ok(report)
    }

    /// One full step with targets drawn from the trainer's seeded stream.
    pub fn step(&mut self, x: &Tensor, source: &[DomainLabel], epoch: usize) -> Result<StepReport> {
        let target = self.sample_targets(source)?;
        self.step_with_targets(x, source, &target, epoch)
    }
}
