//! Structural similarity, single- and multi-scale.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Window, stabilising constants and per-scale weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the pixel values.
    pub dynamic_range: f64,
    /// Raw scale weights, finest scale first; normalised before use.
    pub scale_weights: Vec<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 2.0,
            scale_weights: vec![0.0448, 0.2856, 0.3001, 0.2363, 0.1333],
        }
    }
}

impl SsimConfig {
    pub fn with_dynamic_range(mut self, l: f64) -> Self {
        self.dynamic_range = l;
        self
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    pub fn scales(&self) -> usize {
        self.scale_weights.len()
    }

    /// The first `k` scale weights rescaled to sum to one.
    pub fn weights_for(&self, k: usize) -> Vec<f64> {
        let head = &self.scale_weights[..k.min(self.scale_weights.len())];
        let total: f64 = head.iter().sum();
        head.iter().map(|w| w / total).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.sigma <= 0.0 {
            return Err(Error::Spec("SSIM window must be non-empty with positive sigma".into()));
        }
        if self.k1 <= 0.0 || self.k2 <= 0.0 || self.dynamic_range <= 0.0 {
            return Err(Error::Spec("SSIM constants must be positive".into()));
        }
        if self.scale_weights.is_empty() || self.scale_weights.iter().any(|w| *w <= 0.0 || !w.is_finite()) {
            return Err(Error::Spec("MS-SSIM scale weights must be positive".into()));
        }
        Ok(())
    }

    /// Number of scales a `h x w` input supports: the finest-to-coarsest
    /// chain stops once the side would drop below the window.
    pub fn feasible_scales(&self, h: usize, w: usize) -> usize {
        let side = h.min(w);
        let mut k = self.scales();
        while k > 1 && (side >> (k - 1)) < self.window_size {
            k -= 1;
        }
        k
    }
}

/// Normalised 2-D Gaussian window, row-major `size x size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut out = Vec::with_capacity(size * size);
    for a in &g {
        for b in &g {
            out.push(a * b);
        }
    }
    out
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if a.dims() != b.dims() {
        return shape_err(format!("SSIM operands differ: {:?} vs {:?}", a.dims(), b.dims()));
    }
    match a.dims() {
        &[n, c, h, w] if h > 0 && w > 0 => Ok((n, c, h, w)),
        d => shape_err(format!("SSIM expects (B, C, H, W), got {d:?}")),
    }
}

/// Per-(sample, channel) mean luminance·cs and cs terms, each of shape `(n * c,)`.
fn ssim_terms(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = check_pair(a, b)?;
    let ws = cfg.window_size.min(h).min(w);
    let win = Tensor::from_vec(gaussian_window(ws, cfg.sigma), (1, 1, ws, ws), a.device())?.to_dtype(a.dtype())?;
    let a = a.reshape((n * c, 1, h, w))?;
    let b = b.reshape((n * c, 1, h, w))?;
    let filt = |t: &Tensor| t.conv2d(&win, 0, 1, 1, 1);
    let mu_a = filt(&a)?;
    let mu_b = filt(&b)?;
    let mu_aa = mu_a.sqr()?;
    let mu_bb = mu_b.sqr()?;
    let mu_ab = (&mu_a * &mu_b)?;
    let s_aa = (filt(&a.sqr()?)? - &mu_aa)?;
    let s_bb = (filt(&b.sqr()?)? - &mu_bb)?;
    let s_ab = (filt(&(&a * &b)?)? - &mu_ab)?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let lum = ((mu_ab * 2.0)? + c1)?.div(&((mu_aa + mu_bb)? + c1)?)?;
    let cs = ((s_ab * 2.0)? + c2)?.div(&((s_aa + s_bb)? + c2)?)?;
    let full = (lum * &cs)?;
    let per = |t: Tensor| t.flatten_from(1).and_then(|t| t.mean(D::Minus1));
    Ok((per(full)?, per(cs)?))
}

/// Mean SSIM over all windows, samples and channels.
pub fn ssim(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (full, _) = ssim_terms(a, b, cfg)?;
    Ok(full.mean_all()?)
}

fn halve(t: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = t.dims4()?;
    let t = t.narrow(2, 0, h - h % 2)?.narrow(3, 0, w - w % 2)?;
    Ok(t.avg_pool2d(2)?)
}

/// Multi-scale SSIM.
///
/// Each per-scale term `v` is mapped to `(v + 1) / 2` before being raised to
/// its weight, so negative correlations stay in the real domain and the
/// result lies in `(0, 1]`.
pub fn ms_ssim(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (_, _, h, w) = check_pair(a, b)?;
    let k = cfg.feasible_scales(h, w);
    let weights = cfg.weights_for(k);
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut acc: Option<Tensor> = None;
    for (j, wj) in weights.iter().enumerate() {
        if j > 0 {
            a = halve(&a)?;
            b = halve(&b)?;
        }
        let (full, cs) = ssim_terms(&a, &b, cfg)?;
        let term = if j + 1 == k { full } else { cs };
        let term = ((term + 1.0)? * 0.5)?.powf(*wj)?;
        acc = Some(match acc {
            None => term,
            Some(p) => (p * term)?,
        });
    }
    let acc = acc.ok_or_else(|| Error::Numeric("MS-SSIM evaluated zero scales".into()))?;
    Ok(acc.mean_all()?)
}

/// `1 - ms_ssim(a, b)`.
pub fn msssim_loss(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    Ok((1.0 - ms_ssim(a, b, cfg)?.to_dtype(a.dtype())?)?)
}
