use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::Tensor;

use super::unsup::{mean_of, mean_over_scales};
use super::{record, record_value, Models, SetOptimizer, StepReport, TrainConfig};
use crate::discriminators::DiscriminatorOutput;
use crate::error::{shape_err, Error, Result};
use crate::features::FeatureExtractor;
use crate::generators::Guidance;
use crate::losses::{
    color_paired, cycle_l1, full_sup, identity_sup, lsgan_d, lsgan_g, perceptual, total_variation, SupTerms,
};

/// Two paired images with their skeletons, each `(batch, c, h, w)`.
#[derive(Debug, Clone)]
pub struct PairedBatch {
    pub x: Tensor,
    pub l_x: Tensor,
    pub y: Tensor,
    pub l_y: Tensor,
}

impl PairedBatch {
    pub fn validate(&self) -> Result<()> {
        let (n, _, h, w) = self.x.dims4()?;
        for (name, t) in [("l_x", &self.l_x), ("y", &self.y), ("l_y", &self.l_y)] {
            let d = t.dims();
            if d.len() != 4 || d[0] != n || d[2] != h || d[3] != w {
                return shape_err(format!("paired batch member {name} has shape {d:?}, x has {:?}", self.x.dims()));
            }
        }
        if self.x.dims() != self.y.dims() {
            return shape_err("paired images differ in shape");
        }
        Ok(())
    }
}

/// Intermediate images of the generator objective.
struct Translations {
    terms: SupTerms,
    y_prime: Tensor,
    x_prime: Option<Tensor>,
}

/// Skeleton-guided paired training: triplet discriminator, then `G^t`, then `G^r`.
pub struct SupTrainer {
    models: Models,
    cfg: TrainConfig,
    extractor: Box<dyn FeatureExtractor>,
    opt_d: SetOptimizer,
    opt_t: SetOptimizer,
    opt_r: SetOptimizer,
    step: usize,
}

impl SupTrainer {
    pub fn new(models: Models, cfg: &TrainConfig, extractor: Box<dyn FeatureExtractor>) -> Result<Self> {
        cfg.validate()?;
        if models.disc.spec().num_domains().is_some() {
            return Err(Error::Validation("paired training needs a triplet discriminator".into()));
        }
        Ok(Self {
            opt_d: SetOptimizer::new(models.disc.params().clone(), cfg)?,
            opt_t: SetOptimizer::new(models.pair.translate_update_params(), cfg)?,
            opt_r: SetOptimizer::new(models.pair.reconstruct_update_params().clone(), cfg)?,
            cfg: cfg.clone(),
            models,
            extractor,
            step: 0,
        })
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        for o in [&mut self.opt_d, &mut self.opt_t, &mut self.opt_r] {
            o.set_lr(lr);
        }
    }

    /// Triplet discriminator update over both directions.
    pub fn discriminator_step(&mut self, b: &PairedBatch) -> Result<BTreeMap<String, f64>> {
        let g_t = &self.models.pair.translate;
        let d = &self.models.disc;
        let y_fake = g_t.forward(&b.x, &Guidance::Skeleton(b.l_y.clone()))?.detach();
        let x_fake = g_t.forward(&b.y, &Guidance::Skeleton(b.l_x.clone()))?.detach();
        let real_xy = d.forward_triplet(&b.x, &b.l_y, &b.y)?;
        let fake_xy = d.forward_triplet(&b.x, &b.l_y, &y_fake)?;
        let real_yx = d.forward_triplet(&b.y, &b.l_x, &b.x)?;
        let fake_yx = d.forward_triplet(&b.y, &b.l_x, &x_fake)?;
        let adv = |real: &[DiscriminatorOutput], fake: &[DiscriminatorOutput]| {
            mean_of(
                real.iter()
                    .zip(fake)
                    .map(|(r, f)| lsgan_d(&r.src_map, &f.src_map))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        let total = (adv(&real_xy, &fake_xy)? + adv(&real_yx, &fake_yx)?)?;
        let mut out = BTreeMap::new();
        record(&mut out, "d_adv", &total)?;
        let g = self.opt_d.minimize(&total, "grad_norm_d")?;
        record_value(&mut out, "grad_norm_d", g)?;
        Ok(out)
    }

    fn translations(&self, b: &PairedBatch, both_cycles: bool) -> Result<Translations> {
        let w = self.cfg.loss_weights.supervised;
        let pair = &self.models.pair;
        let d = &self.models.disc;
        let sk = |t: &Tensor| Guidance::Skeleton(t.clone());
        let zero = Tensor::zeros((), b.x.dtype(), b.x.device())?;

        let y_prime = pair.translate.forward(&b.x, &sk(&b.l_y))?;
        let x_hat = pair.reconstruct.forward(&y_prime, &sk(&b.l_x))?;
        let mut cgan = mean_over_scales(&d.forward_triplet(&b.x, &b.l_y, &y_prime)?, |o| lsgan_g(&o.src_map))?;
        let mut color = color_paired(&y_prime, &b.y)?;
        let mut cyc = cycle_l1(&x_hat, &b.x)?;
        let mut tv = total_variation(&y_prime)?;
        let mut vgg = if w.lambda_vgg > 0.0 {
            perceptual(&y_prime, &b.y, self.extractor.as_ref())?
        } else {
            zero.clone()
        };
        let mut x_prime = None;
        if both_cycles {
            let xp = pair.translate.forward(&b.y, &sk(&b.l_x))?;
            let y_hat = pair.reconstruct.forward(&xp, &sk(&b.l_y))?;
            let adv = mean_over_scales(&d.forward_triplet(&b.y, &b.l_x, &xp)?, |o| lsgan_g(&o.src_map))?;
            cgan = (cgan + adv)?;
            color = (color + color_paired(&xp, &b.x)?)?;
            cyc = (cyc + cycle_l1(&y_hat, &b.y)?)?;
            tv = (tv + total_variation(&xp)?)?;
            if w.lambda_vgg > 0.0 {
                vgg = (vgg + perceptual(&xp, &b.x, self.extractor.as_ref())?)?;
            }
            x_prime = Some(xp);
        }
        let id = identity_sup(
            &pair.translate.forward(&b.x, &sk(&b.l_x))?,
            &b.x,
            &pair.translate.forward(&b.y, &sk(&b.l_y))?,
            &b.y,
        )?;
        Ok(Translations {
            terms: SupTerms {
                cgan,
                color,
                cyc,
                id,
                vgg,
                tv,
            },
            y_prime,
            x_prime,
        })
    }

    /// Weighted generator objective without updating anything; `both_cycles`
    /// toggles the `y -> x' -> y_hat` branch.
    pub fn generator_objective(&self, b: &PairedBatch, both_cycles: bool) -> Result<f64> {
        b.validate()?;
        let t = self.translations(b, both_cycles)?;
        super::scalar(&full_sup(&t.terms, &self.cfg.loss_weights.supervised)?)
    }

    /// `G^t` update on the full paired objective over both cycles.
    pub fn translation_step(&mut self, b: &PairedBatch) -> Result<(BTreeMap<String, f64>, Tensor, Tensor)> {
        let t = self.translations(b, true)?;
        let total = full_sup(&t.terms, &self.cfg.loss_weights.supervised)?;
        let mut out = BTreeMap::new();
        record(&mut out, "cgan", &t.terms.cgan)?;
        record(&mut out, "color", &t.terms.color)?;
        record(&mut out, "cyc", &t.terms.cyc)?;
        record(&mut out, "id", &t.terms.id)?;
        record(&mut out, "vgg", &t.terms.vgg)?;
        record(&mut out, "tv", &t.terms.tv)?;
        record(&mut out, "g_total", &total)?;
        let g = self.opt_t.minimize(&total, "grad_norm_t")?;
        record_value(&mut out, "grad_norm_t", g)?;
        let x_prime = t
            .x_prime
            .ok_or_else(|| Error::Validation("reverse cycle was not evaluated".into()))?;
        Ok((out, t.y_prime.detach(), x_prime.detach()))
    }

    /// `G^r` update: both reconstructions from detached translations.
    pub fn reconstruction_step(
        &mut self,
        b: &PairedBatch,
        y_prime: &Tensor,
        x_prime: &Tensor,
    ) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        if !self.opt_r.is_active() {
            out.insert("r_cyc".into(), 0.0);
            out.insert("grad_norm_r".into(), 0.0);
            return Ok(out);
        }
        let g_r = &self.models.pair.reconstruct;
        let x_hat = g_r.forward(y_prime, &Guidance::Skeleton(b.l_x.clone()))?;
        let y_hat = g_r.forward(x_prime, &Guidance::Skeleton(b.l_y.clone()))?;
        let cyc = (cycle_l1(&x_hat, &b.x)? + cycle_l1(&y_hat, &b.y)?)?;
        let total = (&cyc * self.cfg.loss_weights.supervised.lambda_cyc)?;
        record(&mut out, "r_cyc", &cyc)?;
        let g = self.opt_r.minimize(&total, "grad_norm_r")?;
        record_value(&mut out, "grad_norm_r", g)?;
        Ok(out)
    }

    pub fn step(&mut self, b: &PairedBatch, epoch: usize) -> Result<StepReport> {
        b.validate()?;
        let start = Instant::now();
        let mut losses = self.discriminator_step(b)?;
        let (t, y_prime, x_prime) = self.translation_step(b)?;
        losses.extend(t);
        losses.extend(self.reconstruction_step(b, &y_prime, &x_prime)?);
        let report = StepReport {
            step: self.step,
            epoch,
            wall_time: start.elapsed().as_secs_f64(),
            losses,
        };
        self.step += 1;
        Ok(report)
    }
}
