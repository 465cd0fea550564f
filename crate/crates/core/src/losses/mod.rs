//! Differentiable objectives and the two weighted totals.
//!
//! Every operation works on plain tensors of any float dtype and reduces
//! with an arithmetic mean unless noted otherwise.

mod ssim;

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

pub use ssim::{gaussian_window, ms_ssim, msssim_loss, ssim, SsimConfig};

use crate::datamodel::{channel_split, one_hot_batch, DomainLabel};
use crate::error::{shape_err, Error, Result};
use crate::features::FeatureExtractor;

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return shape_err(format!("{op}: operand shapes differ, {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok(())
}

fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Mean absolute difference between a reconstruction and its source.
pub fn cycle_l1(x_hat: &Tensor, x: &Tensor) -> Result<Tensor> {
    same_shape(x_hat, x, "cycle_l1")?;
    l1(x_hat, x)
}

/// Sum over r, g, b of the per-channel mean absolute difference.
pub fn color_cycle(x_hat: &Tensor, x: &Tensor) -> Result<Tensor> {
    same_shape(x_hat, x, "color_cycle")?;
    let (pr, pg, pb) = channel_split(x_hat)?;
    let (tr, tg, tb) = channel_split(x)?;
    Ok(((l1(&pr, &tr)? + l1(&pg, &tg)?)? + l1(&pb, &tb)?)?)
}

/// Identity term of the unpaired task; the caller supplies `G^r(x, z_x)`.
pub fn identity_unsup(g_r_output: &Tensor, x: &Tensor) -> Result<Tensor> {
    same_shape(g_r_output, x, "identity_unsup")?;
    l1(g_r_output, x)
}

/// Identity term of the paired task: `L1(G(x, l_x), x) + L1(G(y, l_y), y)`.
pub fn identity_sup(gt_xx: &Tensor, x: &Tensor, gt_yy: &Tensor, y: &Tensor) -> Result<Tensor> {
    same_shape(gt_xx, x, "identity_sup")?;
    same_shape(gt_yy, y, "identity_sup")?;
    Ok((l1(gt_xx, x)? + l1(gt_yy, y)?)?)
}

/// Channel-wise colour loss between a generated image and its paired target.
pub fn color_paired(y_prime: &Tensor, y: &Tensor) -> Result<Tensor> {
    same_shape(y_prime, y, "color_paired")?;
    color_cycle(y_prime, y)
}

/// Least-squares discriminator loss on raw scores.
pub fn lsgan_d(src_real: &Tensor, src_fake: &Tensor) -> Result<Tensor> {
    let real = (src_real - 1.0)?.sqr()?.mean_all()?;
    let fake = src_fake.sqr()?.mean_all()?;
    Ok((real + fake)?)
}

/// Least-squares generator loss (target 1) on raw scores.
pub fn lsgan_g(src_fake: &Tensor) -> Result<Tensor> {
    Ok((src_fake - 1.0)?.sqr()?.mean_all()?)
}

/// Mean cross-entropy of `(batch, m)` logits against domain labels.
pub fn domain_cls(logits: &Tensor, targets: &[DomainLabel]) -> Result<Tensor> {
    let (b, m) = logits.dims2()?;
    if targets.len() != b {
        return shape_err(format!("domain_cls: {b} logit rows but {} labels", targets.len()));
    }
    if let Some(t) = targets.iter().find(|t| t.num_domains() != m) {
        return shape_err(format!(
            "domain_cls: logits have {m} classes, label has {}",
            t.num_domains()
        ));
    }
    let one_hot = one_hot_batch(targets, logits.dtype(), logits.device())?;
    let lse = logits.log_sum_exp(D::Minus1)?;
    let picked = (logits * one_hot)?.sum(D::Minus1)?;
    Ok((lse - picked)?.mean_all()?)
}

/// Anisotropic total variation, summed over every element.
pub fn total_variation(y: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = y.dims4()?;
    let mut total = Tensor::zeros((), y.dtype(), y.device())?;
    if w > 1 {
        let dx = (y.narrow(3, 1, w - 1)? - y.narrow(3, 0, w - 1)?)?;
        total = (total + dx.abs()?.sum_all()?)?;
    }
    if h > 1 {
        let dy = (y.narrow(2, 1, h - 1)? - y.narrow(2, 0, h - 1)?)?;
        total = (total + dy.abs()?.sum_all()?)?;
    }
    Ok(total)
}

/// Weighted L1 distance between extractor layers.
pub fn perceptual(y_prime: &Tensor, y: &Tensor, extractor: &dyn FeatureExtractor) -> Result<Tensor> {
    same_shape(y_prime, y, "perceptual")?;
    let fa = extractor.layers(y_prime)?;
    let fb = extractor.layers(y)?;
    let weights = extractor.layer_weights();
    if weights.len() != fa.len() || fa.len() != fb.len() {
        return Err(Error::Spec(format!(
            "extractor `{}` declares {} weights for {} layers",
            extractor.name(),
            weights.len(),
            fa.len()
        )));
    }
    let mut total = Tensor::zeros((), y.dtype(), y.device())?;
    for ((a, b), w) in fa.iter().zip(&fb).zip(&weights) {
        total = (total + (l1(a, b)? * *w)?)?;
    }
    Ok(total)
}

/// Weights of the unpaired objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnsupWeights {
    pub lambda_c: f64,
    pub lambda_cyc: f64,
    pub lambda_m: f64,
    pub lambda_id: f64,
}

impl Default for UnsupWeights {
    fn default() -> Self {
        Self {
            lambda_c: 1.0,
            lambda_cyc: 10.0,
            lambda_m: 1.0,
            lambda_id: 0.5,
        }
    }
}

/// Weights of the paired objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupWeights {
    pub lambda_c: f64,
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    pub lambda_vgg: f64,
    pub lambda_tv: f64,
}

impl Default for SupWeights {
    fn default() -> Self {
        Self {
            lambda_c: 800.0,
            lambda_cyc: 0.1,
            lambda_id: 0.01,
            lambda_vgg: 1000.0,
            lambda_tv: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(default)]
    pub unsupervised: UnsupWeights,
    #[serde(default)]
    pub supervised: SupWeights,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let u = &self.unsupervised;
        let s = &self.supervised;
        let all = [
            ("unsupervised.lambda_c", u.lambda_c),
            ("unsupervised.lambda_cyc", u.lambda_cyc),
            ("unsupervised.lambda_m", u.lambda_m),
            ("unsupervised.lambda_id", u.lambda_id),
            ("supervised.lambda_c", s.lambda_c),
            ("supervised.lambda_cyc", s.lambda_cyc),
            ("supervised.lambda_id", s.lambda_id),
            ("supervised.lambda_vgg", s.lambda_vgg),
            ("supervised.lambda_tv", s.lambda_tv),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("loss weight {name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Raw (unweighted) terms of the unpaired objective.
#[derive(Debug, Clone)]
pub struct UnsupTerms {
    pub lsgan: Tensor,
    pub cls: Tensor,
    pub colorcyc: Tensor,
    /// Already `1 - ms_ssim`.
    pub msssim_loss: Tensor,
    pub id: Tensor,
}

pub fn full_unsup(t: &UnsupTerms, w: &UnsupWeights) -> Result<Tensor> {
    let total = (&t.lsgan + (&t.cls * w.lambda_c)?)?;
    let total = (total + (&t.colorcyc * w.lambda_cyc)?)?;
    let total = (total + (&t.msssim_loss * w.lambda_m)?)?;
    Ok((total + (&t.id * w.lambda_id)?)?)
}

/// Raw (unweighted) terms of the paired objective.
#[derive(Debug, Clone)]
pub struct SupTerms {
    pub cgan: Tensor,
    pub color: Tensor,
    pub cyc: Tensor,
    pub id: Tensor,
    pub vgg: Tensor,
    pub tv: Tensor,
}

pub fn full_sup(t: &SupTerms, w: &SupWeights) -> Result<Tensor> {
    let total = (&t.cgan + (&t.color * w.lambda_c)?)?;
    let total = (total + (&t.cyc * w.lambda_cyc)?)?;
    let total = (total + (&t.id * w.lambda_id)?)?;
    let total = (total + (&t.vgg * w.lambda_vgg)?)?;
    Ok((total + (&t.tv * w.lambda_tv)?)?)
}
