//! Evaluation measures: PSNR, Fréchet distance over pluggable features,
//! an inception-style score, and the real-train / generated-test
//! classification harness.

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, validation_err, Error, Result};
use crate::features::FeatureExtractor;
use crate::nn::{Activation, ConvGeom, ConvUnit, Dense, ParamBuilder, ParamSet};

/// Peak signal-to-noise ratio in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return shape_err(format!("psnr operands differ: {:?} vs {:?}", a.dims(), b.dims()));
    }
    if !(peak > 0.0) {
        return validation_err(format!("psnr peak must be positive, got {peak}"));
    }
    let a = a.to_dtype(DType::F64)?;
    let b = b.to_dtype(DType::F64)?;
    let mse: f64 = (a - b)?.sqr()?.mean_all()?.to_scalar()?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Mean and unbiased covariance of a feature cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Converts a `(n, d)` tensor into a row-per-sample matrix.
pub fn feature_matrix(features: &Tensor) -> Result<DMatrix<f64>> {
    let (n, d) = features.dims2()?;
    let data: Vec<f64> = features.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    Ok(DMatrix::from_row_slice(n, d, &data))
}

pub fn fit_gaussian(features: &DMatrix<f64>) -> Result<GaussianSummary> {
    let n = features.nrows();
    if n < 2 {
        return validation_err(format!("fit_gaussian needs at least 2 samples, got {n}"));
    }
    let mean = features.row_mean().transpose();
    let mut centred = features.clone();
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let covariance = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianSummary {
        mean,
        covariance,
        count: n,
    })
}

const EIGEN_EPS: f64 = 1e-12;
const EIGEN_MAX_ITER: usize = 10_000;

/// Eigenvalues of a symmetric matrix, clamped at zero; `None` when the solver fails.
fn psd_eigen(m: &DMatrix<f64>) -> Option<nalgebra::SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut e = sym.try_symmetric_eigen(EIGEN_EPS, EIGEN_MAX_ITER)?;
    if e.eigenvalues.iter().any(|v| !v.is_finite()) {
        return None;
    }
    e.eigenvalues.apply(|v| *v = v.max(0.0));
    Some(e)
}

fn psd_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let e = psd_eigen(m)?;
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt));
    Some(&e.eigenvectors * d * e.eigenvectors.transpose())
}

/// Trace of `(a b)^{1/2}` for PSD `a`, `b`, via `(a^{1/2} b a^{1/2})^{1/2}`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<f64> {
    let s = psd_sqrt(a)?;
    let inner = &s * b * &s;
    let e = psd_eigen(&inner)?;
    Some(e.eigenvalues.iter().map(|v| v.sqrt()).sum())
}

/// `|mu_p - mu_q|^2 + tr(S_p + S_q - 2 (S_p S_q)^{1/2})`, clamped at zero.
pub fn frechet_distance(p: &GaussianSummary, q: &GaussianSummary) -> Result<f64> {
    if p.dim() != q.dim() {
        return shape_err(format!("frechet_distance: dims {} vs {}", p.dim(), q.dim()));
    }
    let d = p.dim();
    let mean_term = (&p.mean - &q.mean).norm_squared();
    let tr = p.covariance.trace() + q.covariance.trace();
    let cross = match trace_sqrt_product(&p.covariance, &q.covariance) {
        Some(v) => v,
        None => {
            let reg = DMatrix::<f64>::identity(d, d) * 1e-6;
            let a = &p.covariance + &reg;
            let b = &q.covariance + &reg;
            trace_sqrt_product(&a, &b)
                .ok_or_else(|| Error::Numeric("matrix square root failed after regularisation".into()))?
        }
    };
    let v = mean_term + tr - 2.0 * cross;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("frechet distance is not finite ({v})")));
    }
    Ok(v.max(0.0))
}

/// Fréchet distance between two image sets under `extractor`.
pub fn frechet_distance_images(real: &Tensor, fake: &Tensor, extractor: &dyn FeatureExtractor) -> Result<f64> {
    let p = fit_gaussian(&feature_matrix(&extractor.embed(real)?)?)?;
    let q = fit_gaussian(&feature_matrix(&extractor.embed(fake)?)?)?;
    frechet_distance(&p, &q)
}

/// `exp(E[KL(p(y|x) || p(y))])` per split; returns mean and population std.
pub fn inception_style_score(probs: &DMatrix<f64>, splits: usize) -> Result<(f64, f64)> {
    let n = probs.nrows();
    if splits == 0 || splits > n {
        return validation_err(format!("splits must be in 1..={n}, got {splits}"));
    }
    for (i, row) in probs.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-4 || row.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return validation_err(format!("classifier row {i} is not a probability vector (sum {s})"));
        }
    }
    let mut scores = Vec::with_capacity(splits);
    for k in 0..splits {
        let lo = k * n / splits;
        let hi = (k + 1) * n / splits;
        let part = probs.rows(lo, hi - lo);
        let marginal = part.row_mean();
        let mut kl = 0.0;
        for row in part.row_iter() {
            for (p, m) in row.iter().zip(marginal.iter()) {
                if *p > 0.0 {
                    kl += p * (p / m).ln();
                }
            }
        }
        scores.push((kl / part.nrows() as f64).exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub width: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 8,
            learning_rate: 2e-3,
            width: 16,
            seed: 0,
        }
    }
}

/// Three stride-2 convolutions, global average pooling and a linear head.
///
/// There is no normalisation layer: per-channel statistics carry the colour
/// information the domains differ in.
#[derive(Debug, Clone)]
pub struct DomainClassifier {
    convs: Vec<ConvUnit>,
    head: Dense,
    params: ParamSet,
    num_domains: usize,
}

impl DomainClassifier {
    pub fn new(num_domains: usize, in_channels: usize, cfg: &ClassifierConfig, device: &Device) -> Result<Self> {
        if num_domains < 2 {
            return validation_err(format!("classifier needs at least 2 domains, got {num_domains}"));
        }
        let mut pb = ParamBuilder::new(cfg.seed, DType::F32, device).with_std(0.1);
        let geom = ConvGeom {
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let w = cfg.width;
        let mut convs = Vec::new();
        let mut c_in = in_channels;
        for (i, c_out) in [w, 2 * w, 4 * w].into_iter().enumerate() {
            convs.push(ConvUnit::conv(
                &mut pb,
                &format!("conv{i}"),
                c_in,
                c_out,
                geom,
                false,
                Activation::LeakyRelu(0.2),
            )?);
            c_in = c_out;
        }
        let head = Dense::new(&mut pb, "head", c_in, num_domains)?;
        Ok(Self {
            convs,
            head,
            params: pb.finish(),
            num_domains,
        })
    }

    /// Trains on `(n, c, h, w)` images with domain indices.
    pub fn train(images: &Tensor, labels: &[usize], num_domains: usize, cfg: &ClassifierConfig) -> Result<Self> {
        let n = images.dim(0)?;
        if labels.len() != n {
            return shape_err(format!("{n} images but {} labels", labels.len()));
        }
        if let Some(l) = labels.iter().find(|l| **l >= num_domains) {
            return validation_err(format!("label {l} out of range for {num_domains} domains"));
        }
        let clf = Self::new(num_domains, images.dim(1)?, cfg, images.device())?;
        let images = images.to_dtype(DType::F32)?;
        let mut opt = AdamW::new(
            clf.params.vars(),
            ParamsAdamW {
                lr: cfg.learning_rate,
                weight_decay: 0.0,
                ..ParamsAdamW::default()
            },
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let idx: Vec<u32> = chunk.iter().map(|&i| i as u32).collect();
                let idx = Tensor::new(idx.as_slice(), images.device())?;
                let x = images.index_select(&idx, 0)?;
                let y: Vec<u32> = chunk.iter().map(|&i| labels[i] as u32).collect();
                let y = Tensor::new(y.as_slice(), images.device())?;
                let loss = candle_nn::loss::cross_entropy(&clf.logits(&x)?, &y)?;
                opt.backward_step(&loss)?;
            }
        }
        Ok(clf)
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.to_dtype(DType::F32)?;
        for c in &self.convs {
            h = c.forward(&h)?;
        }
        let pooled = h.flatten_from(2)?.mean(D::Minus1)?;
        self.head.forward(&pooled)
    }

    pub fn probabilities(&self, x: &Tensor) -> Result<DMatrix<f64>> {
        let p = candle_nn::ops::softmax_last_dim(&self.logits(x)?)?;
        feature_matrix(&p)
    }

    /// Top-1 and top-k accuracy against `labels`.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize], k: usize) -> Result<(f64, f64)> {
        let logits = feature_matrix(&self.logits(x)?)?;
        if logits.nrows() != labels.len() {
            return shape_err(format!("{} images but {} labels", logits.nrows(), labels.len()));
        }
        let mut top1 = 0usize;
        let mut topk = 0usize;
        for (row, &label) in logits.row_iter().zip(labels) {
            let target = row[label];
            let rank = row.iter().filter(|v| **v > target).count();
            top1 += usize::from(rank == 0);
            topk += usize::from(rank < k);
        }
        let n = labels.len() as f64;
        Ok((top1 as f64 / n, topk as f64 / n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub top1: f64,
    /// Present when there are more than five domains.
    pub top5: Option<f64>,
    pub train_samples: usize,
    pub test_samples: usize,
}

/// Trains a classifier on real images and scores it on generated images.
pub fn classification_accuracy(
    real_train: &Tensor,
    real_labels: &[usize],
    generated_test: &Tensor,
    intended_labels: &[usize],
    num_domains: usize,
    cfg: &ClassifierConfig,
) -> Result<AccuracyReport> {
    if num_domains < 2 {
        return validation_err(format!("classification needs at least 2 domains, got {num_domains}"));
    }
    let clf = DomainClassifier::train(real_train, real_labels, num_domains, cfg)?;
    let (top1, top5) = clf.accuracy(generated_test, intended_labels, 5)?;
    Ok(AccuracyReport {
        top1,
        top5: (num_domains > 5).then_some(top5),
        train_samples: real_labels.len(),
        test_samples: intended_labels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_cases() {
        let dev = Device::Cpu;
        let a = Tensor::zeros((1, 1, 4, 4), DType::F64, &dev).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = (&a + 0.1).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let c = (&a + 10.0).unwrap();
        assert!((psnr(&a, &c, 255.0).unwrap() - 28.130803608679105).abs() < 1e-9);
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn fit_two_points() {
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0]);
        let g = fit_gaussian(&f).unwrap();
        assert_eq!(g.mean.as_slice(), &[1.0, 0.0]);
        assert_eq!(g.covariance, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        assert!(fit_gaussian(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn frechet_commuting_case() {
        let p = GaussianSummary {
            mean: DVector::zeros(2),
            covariance: DMatrix::identity(2, 2) * 4.0,
            count: 10,
        };
        let q = GaussianSummary {
            covariance: DMatrix::identity(2, 2),
            ..p.clone()
        };
        assert!((frechet_distance(&p, &q).unwrap() - 2.0).abs() < 1e-9);
        assert!(frechet_distance(&p, &p).unwrap().abs() < 1e-9);
    }

    #[test]
    fn is_uniform_and_one_hot() {
        let uniform = DMatrix::from_element(6, 3, 1.0 / 3.0);
        assert!((inception_style_score(&uniform, 1).unwrap().0 - 1.0).abs() < 1e-12);
        let one_hot = DMatrix::from_fn(6, 3, |i, j| f64::from(u8::from(i % 3 == j)));
        assert!((inception_style_score(&one_hot, 1).unwrap().0 - 3.0).abs() < 1e-12);
        let bad = DMatrix::from_element(2, 2, 0.7);
        assert!(matches!(inception_style_score(&bad, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn accuracy_needs_two_domains() {
        let x = Tensor::zeros((2, 3, 8, 8), DType::F32, &Device::Cpu).unwrap();
        let r = classification_accuracy(&x, &[0, 0], &x, &[0, 0], 1, &ClassifierConfig::default());
        assert!(matches!(r, Err(Error::Validation(_))));
    }
}
