//! Central finite-difference verification of the loss gradients.

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datamodel::DomainLabel;
use crate::error::Result;
use crate::features::{FeatureActivation, RandomConvConfig, RandomConvExtractor};
use crate::losses::{
    color_cycle, color_paired, cycle_l1, domain_cls, identity_sup, identity_unsup, lsgan_d, lsgan_g, ms_ssim,
    perceptual, ssim, total_variation, SsimConfig,
};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
const SHAPE: (usize, usize, usize, usize) = (1, 3, 8, 8);

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn eval(f: &dyn Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor]) -> Result<f64> {
    Ok(f(inputs)?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Largest, over inputs, of `|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|)`
/// (Euclidean norms); inputs should be `f64`.
pub fn max_relative_error(f: &dyn Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor], step: f64) -> Result<f64> {
    let vars = inputs.iter().map(Var::from_tensor).collect::<candle_core::Result<Vec<_>>>()?;
    let live: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().clone()).collect();
    let grads = f(&live)?.backward()?;
    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?,
            None => vec![0.0; var.elem_count()],
        };
        let base: Vec<f64> = inputs[k].to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let mut numeric = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let probe = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[i] += delta;
                let mut args: Vec<Tensor> = inputs.to_vec();
                args[k] = Tensor::from_vec(v, inputs[k].dims(), inputs[k].device())?.to_dtype(inputs[k].dtype())?;
                eval(f, &args)
            };
            numeric.push((probe(step)? - probe(-step)?) / (2.0 * step));
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn tensor(v: Vec<f64>, shape: (usize, usize, usize, usize)) -> Result<Tensor> {
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// A random image and a partner differing by at least 0.1 in every element,
/// keeping the absolute value away from its kink.
fn l1_pair(rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
    let n = SHAPE.0 * SHAPE.1 * SHAPE.2 * SHAPE.3;
    let a = uniform(rng, -0.8, 0.8, n);
    let b: Vec<f64> = a
        .iter()
        .map(|v| {
            let d = rng.random_range(0.1..0.2);
            if rng.random_bool(0.5) {
                v + d
            } else {
                v - d
            }
        })
        .collect();
    Ok((tensor(a, SHAPE)?, tensor(b, SHAPE)?))
}

/// Runs the finite-difference check over every loss operation.
pub fn loss_suite(seed: u64) -> Result<Vec<GradCheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = SHAPE.0 * SHAPE.1 * SHAPE.2 * SHAPE.3;
    let cfg = SsimConfig::default();
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| {
        out.push(GradCheckResult {
            name: name.to_string(),
            max_rel_error: err,
            passed: err < TOLERANCE,
        })
    };

    let (a, b) = l1_pair(&mut rng)?;
    push("cycle_l1", max_relative_error(&|t| cycle_l1(&t[0], &t[1]), &[a.clone(), b.clone()], STEP)?);
    push("color_cycle", max_relative_error(&|t| color_cycle(&t[0], &t[1]), &[a.clone(), b.clone()], STEP)?);
    push("identity_unsup", max_relative_error(&|t| identity_unsup(&t[0], &t[1]), &[a.clone(), b.clone()], STEP)?);
    push("color_paired", max_relative_error(&|t| color_paired(&t[0], &t[1]), &[a.clone(), b.clone()], STEP)?);
    let (c, d) = l1_pair(&mut rng)?;
    push(
        "identity_sup",
        max_relative_error(&|t| identity_sup(&t[0], &t[1], &t[2], &t[3]), &[a, b, c, d], STEP)?,
    );

    let sa = tensor(uniform(&mut rng, -1.0, 1.0, n), SHAPE)?;
    let sb = tensor(uniform(&mut rng, -1.0, 1.0, n), SHAPE)?;
    push("ssim", max_relative_error(&|t| ssim(&t[0], &t[1], &cfg), &[sa.clone(), sb.clone()], STEP)?);
    push("ms_ssim", max_relative_error(&|t| ms_ssim(&t[0], &t[1], &cfg), &[sa.clone(), sb.clone()], STEP)?);
    push("lsgan_d", max_relative_error(&|t| lsgan_d(&t[0], &t[1]), &[sa.clone(), sb.clone()], STEP)?);
    push("lsgan_g", max_relative_error(&|t| lsgan_g(&t[0]), &[sa], STEP)?);

    let logits = Tensor::from_vec(uniform(&mut rng, -2.0, 2.0, 8), (2, 4), &Device::Cpu)?;
    let labels = [DomainLabel::new(1, 4)?, DomainLabel::new(3, 4)?];
    push("domain_cls", max_relative_error(&|t| domain_cls(&t[0], &labels), &[logits], STEP)?);

    let ramp: Vec<f64> = (0..n)
        .map(|i| {
            let (y, x) = ((i / SHAPE.3) % SHAPE.2, i % SHAPE.3);
            0.1 * (x + y) as f64 - 0.7 + rng.random_range(-0.02..0.02)
        })
        .collect();
    push("total_variation", max_relative_error(&|t| total_variation(&t[0]), &[tensor(ramp, SHAPE)?], STEP)?);

    let extractor = RandomConvExtractor::new(
        RandomConvConfig {
            seed,
            in_channels: 3,
            widths: vec![4, 8],
            activation: FeatureActivation::Tanh,
            nonnegative: true,
        },
        DType::F64,
        &Device::Cpu,
    )?;
    let y = uniform(&mut rng, -0.5, 0.5, n);
    let y_prime: Vec<f64> = y.iter().map(|v| v + rng.random_range(0.1..0.3)).collect();
    push(
        "perceptual",
        max_relative_error(
            &|t| perceptual(&t[0], &t[1], &extractor),
            &[tensor(y_prime, SHAPE)?, tensor(y, SHAPE)?],
            STEP,
        )?,
    );
    Ok(out)
}
