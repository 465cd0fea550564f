//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense `(n, c, h, w)` array in plain vectors.
#[derive(Clone, Debug)]
pub struct Arr {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Arr {
    pub fn new(n: usize, c: usize, h: usize, w: usize, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), n * c * h * w);
        Self { n, c, h, w, v }
    }

    pub fn random(seed: u64, n: usize, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * c * h * w).map(|_| rng.random_range(lo..hi)).collect();
        Self::new(n, c, h, w, v)
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.v[((n * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::from_vec(self.v.clone(), (self.n, self.c, self.h, self.w), &Device::Cpu).unwrap()
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let (n, c, h, w) = t.dims4().unwrap();
        let v = t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        Self::new(n, c, h, w, v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.n, self.c, self.h, self.w, self.v.iter().map(|x| f(*x)).collect())
    }
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar().unwrap()
}

pub fn mean_abs_diff(a: &Arr, b: &Arr) -> f64 {
    let mut s = 0.0;
    for i in 0..a.v.len() {
        s += (a.v[i] - b.v[i]).abs();
    }
    s / a.v.len() as f64
}

/// Nested-loop anisotropic total variation (sum reduction).
pub fn tv_oracle(a: &Arr) -> f64 {
    let mut s = 0.0;
    for n in 0..a.n {
        for c in 0..a.c {
            for y in 0..a.h {
                for x in 0..a.w {
                    if x + 1 < a.w {
                        s += (a.at(n, c, y, x + 1) - a.at(n, c, y, x)).abs();
                    }
                    if y + 1 < a.h {
                        s += (a.at(n, c, y + 1, x) - a.at(n, c, y, x)).abs();
                    }
                }
            }
        }
    }
    s
}

fn gauss_1d(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size - 1) as f64 / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - mid;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|g| g / total).collect()
}

/// Per-(sample, channel) mean SSIM map and mean contrast-structure map,
/// computed window by window.
pub fn ssim_windows(a: &Arr, b: &Arr, window: usize, sigma: f64, l: f64) -> Vec<(f64, f64)> {
    let ws = window.min(a.h).min(a.w);
    let g = gauss_1d(ws, sigma);
    let c1 = (0.01 * l) * (0.01 * l);
    let c2 = (0.03 * l) * (0.03 * l);
    let mut out = Vec::new();
    for n in 0..a.n {
        for c in 0..a.c {
            let mut full_sum = 0.0;
            let mut cs_sum = 0.0;
            let mut count = 0.0;
            for y0 in 0..=a.h - ws {
                for x0 in 0..=a.w - ws {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..ws {
                        for dx in 0..ws {
                            let wt = g[dy] * g[dx];
                            let va = a.at(n, c, y0 + dy, x0 + dx);
                            let vb = b.at(n, c, y0 + dy, x0 + dx);
                            ma += wt * va;
                            mb += wt * vb;
                            saa += wt * va * va;
                            sbb += wt * vb * vb;
                            sab += wt * va * vb;
                        }
                    }
                    let var_a = saa - ma * ma;
                    let var_b = sbb - mb * mb;
                    let cov = sab - ma * mb;
                    let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
                    let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
                    full_sum += lum * cs;
                    cs_sum += cs;
                    count += 1.0;
                }
            }
            out.push((full_sum / count, cs_sum / count));
        }
    }
    out
}

pub fn ssim_oracle(a: &Arr, b: &Arr, l: f64) -> f64 {
    let per = ssim_windows(a, b, 11, 1.5, l);
    per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64
}

/// 2x2 mean pooling after dropping an odd trailing row/column.
pub fn downsample(a: &Arr) -> Arr {
    let (h, w) = (a.h / 2, a.w / 2);
    let mut v = Vec::with_capacity(a.n * a.c * h * w);
    for n in 0..a.n {
        for c in 0..a.c {
            for y in 0..h {
                for x in 0..w {
                    let s = a.at(n, c, 2 * y, 2 * x)
                        + a.at(n, c, 2 * y + 1, 2 * x)
                        + a.at(n, c, 2 * y, 2 * x + 1)
                        + a.at(n, c, 2 * y + 1, 2 * x + 1);
                    v.push(s / 4.0);
                }
            }
        }
    }
    Arr::new(a.n, a.c, h, w, v)
}

/// Explicit downsample-then-SSIM loop over `weights.len()` scales, with
/// each per-scale term mapped to `(v + 1) / 2` before weighting.
pub fn ms_ssim_oracle(a: &Arr, b: &Arr, weights: &[f64], l: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mut a = a.clone();
    let mut b = b.clone();
    let mut prod = vec![1.0; a.n * a.c];
    for (j, wj) in weights.iter().enumerate() {
        if j > 0 {
            a = downsample(&a);
            b = downsample(&b);
        }
        let per = ssim_windows(&a, &b, 11, 1.5, l);
        for (k, (full, cs)) in per.iter().enumerate() {
            let v = if j + 1 == weights.len() { *full } else { *cs };
            prod[k] *= ((v + 1.0) / 2.0).powf(*wj);
        }
    }
    prod.iter().sum::<f64>() / prod.len() as f64
}

/// Direct 3x3 stride-2 pad-1 convolution plus bias.
pub fn conv3x3_s2(x: &Arr, w: &Arr, bias: &[f64]) -> Arr {
    let (ho, wo) = ((x.h + 2 - 3) / 2 + 1, (x.w + 2 - 3) / 2 + 1);
    let co = w.n;
    let mut v = Vec::with_capacity(x.n * co * ho * wo);
    for n in 0..x.n {
        for o in 0..co {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut s = bias[o];
                    for ci in 0..x.c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (2 * y + ky) as isize - 1;
                                let ix = (2 * xx + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                s += w.at(o, ci, ky, kx) * x.at(n, ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    v.push(s);
                }
            }
        }
    }
    Arr::new(x.n, co, ho, wo, v)
}

/// Random symmetric positive semi-definite matrix.
pub fn rand_psd(seed: u64, d: usize) -> nalgebra::DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose()
}

/// A named check: observed error against its tolerance.
pub struct Case {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Case {
    pub fn new(name: &str, got: f64, expect: f64, tolerance: f64) -> Self {
        let error = if got.is_nan() { f64::INFINITY } else { (got - expect).abs() };
        Self {
            name: name.to_string(),
            error,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

fn filled(c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Arr {
    let mut v = Vec::with_capacity(c * h * w);
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                v.push(f(ci, y, x));
            }
        }
    }
    Arr::new(1, c, h, w, v)
}

/// Every closed-form and brute-force loss example, evaluated once.
pub fn loss_oracle_cases() -> Vec<Case> {
    use asymgan::datamodel::DomainLabel;
    use asymgan::features::{RandomConvConfig, RandomConvExtractor};
    use asymgan::losses::*;

    let t0 = |v: f64| Tensor::new(v, &Device::Cpu).unwrap();
    let mut cases = Vec::new();
    let x = Arr::random(100, 1, 3, 8, 8, -0.7, 0.7);
    let xt = x.tensor();
    let shifted = x.map(|v| v + 0.2).tensor();
    let y = Arr::random(101, 1, 3, 8, 8, -1.0, 1.0);
    let yt = y.tensor();

    cases.push(Case::new("cycle_l1 offset 0.2", scalar(&cycle_l1(&shifted, &xt).unwrap()), 0.2, 1e-6));
    cases.push(Case::new(
        "cycle_l1 brute force",
        scalar(&cycle_l1(&yt, &xt).unwrap()),
        mean_abs_diff(&y, &x),
        1e-6,
    ));
    let red = filled(3, 8, 8, |c, yy, xx| x.at(0, c, yy, xx) + if c == 0 { 0.1 } else { 0.0 });
    cases.push(Case::new("color_cycle red +0.1", scalar(&color_cycle(&red.tensor(), &xt).unwrap()), 0.1, 1e-6));
    cases.push(Case::new(
        "color_cycle == 3 cycle_l1",
        scalar(&color_cycle(&yt, &xt).unwrap()),
        3.0 * scalar(&cycle_l1(&yt, &xt).unwrap()),
        1e-6,
    ));
    cases.push(Case::new(
        "identity_unsup offset 0.2",
        scalar(&identity_unsup(&shifted, &xt).unwrap()),
        0.2,
        1e-6,
    ));
    cases.push(Case::new(
        "identity_unsup brute force",
        scalar(&identity_unsup(&yt, &xt).unwrap()),
        mean_abs_diff(&y, &x),
        1e-6,
    ));
    let x01 = x.map(|v| v + 0.1).tensor();
    let y01 = y.map(|v| v - 0.1).tensor();
    cases.push(Case::new(
        "identity_sup 0.1 + 0.1",
        scalar(&identity_sup(&x01, &xt, &y01, &yt).unwrap()),
        0.2,
        1e-6,
    ));
    cases.push(Case::new("color_paired red +0.1", scalar(&color_paired(&red.tensor(), &xt).unwrap()), 0.1, 1e-6));
    cases.push(Case::new(
        "color_paired == 3 cycle_l1",
        scalar(&color_paired(&yt, &xt).unwrap()),
        3.0 * scalar(&cycle_l1(&yt, &xt).unwrap()),
        1e-6,
    ));

    let cfg1 = SsimConfig::default().with_dynamic_range(1.0);
    let a = Arr::new(1, 1, 16, 16, vec![0.5; 256]).tensor();
    let b = Arr::new(1, 1, 16, 16, vec![0.25; 256]).tensor();
    cases.push(Case::new(
        "ssim constants L=1",
        scalar(&ssim(&a, &b, &cfg1).unwrap()),
        (2.0 * 0.125 + 1e-4) / (0.3125 + 1e-4),
        1e-6,
    ));
    let sa = Arr::random(102, 1, 3, 24, 24, -1.0, 1.0);
    let sb = sa.map(|v| (0.5 * v + 0.3 * (3.0 * v).cos()).clamp(-1.0, 1.0));
    cases.push(Case::new(
        "ssim sliding window",
        scalar(&ssim(&sa.tensor(), &sb.tensor(), &SsimConfig::default()).unwrap()),
        ssim_oracle(&sa, &sb, 2.0),
        1e-5,
    ));
    let ma = Arr::random(103, 1, 3, 176, 176, -1.0, 1.0);
    let mb = Arr::random(104, 1, 3, 176, 176, -1.0, 1.0).map(|v| 0.5 * v);
    let mb = Arr::new(1, 3, 176, 176, ma.v.iter().zip(&mb.v).map(|(p, q)| (0.6 * p + q).clamp(-1.0, 1.0)).collect());
    let cfg = SsimConfig::default();
    cases.push(Case::new(
        "ms_ssim 176x176 scale loop",
        scalar(&ms_ssim(&ma.tensor(), &mb.tensor(), &cfg).unwrap()),
        ms_ssim_oracle(&ma, &mb, &cfg.scale_weights, 2.0),
        1e-5,
    ));

    let half = Tensor::full(0.5f64, (1, 1, 6, 6), &Device::Cpu).unwrap();
    cases.push(Case::new("lsgan_d 0.5/0.5", scalar(&lsgan_d(&half, &half).unwrap()), 0.5, 1e-9));
    cases.push(Case::new("lsgan_g 0.5", scalar(&lsgan_g(&half).unwrap()), 0.25, 1e-9));
    let uniform = Tensor::zeros((2, 4), DType::F64, &Device::Cpu).unwrap();
    let labels = [DomainLabel::new(1, 4).unwrap(), DomainLabel::new(3, 4).unwrap()];
    cases.push(Case::new(
        "domain_cls uniform m=4",
        scalar(&domain_cls(&uniform, &labels).unwrap()),
        4f64.ln(),
        1e-6,
    ));

    let ext = RandomConvExtractor::new(
        RandomConvConfig {
            seed: 5,
            widths: vec![8, 8],
            ..RandomConvConfig::default()
        },
        DType::F64,
        &Device::Cpu,
    )
    .unwrap();
    let (mut ha, mut hb) = (y.clone(), x.clone());
    let mut expect = 0.0;
    let n_stages = ext.stages().len() as f64;
    for (w, bias) in ext.stages() {
        let w = Arr::from_tensor(w);
        let bias: Vec<f64> = bias.flatten_all().unwrap().to_vec1().unwrap();
        ha = conv3x3_s2(&ha, &w, &bias).map(|v| v.max(0.0));
        hb = conv3x3_s2(&hb, &w, &bias).map(|v| v.max(0.0));
        expect += mean_abs_diff(&ha, &hb) / n_stages;
    }
    cases.push(Case::new(
        "perceptual recompute",
        scalar(&perceptual(&yt, &xt, &ext).unwrap()),
        expect,
        1e-6,
    ));

    let tv = Arr::new(1, 1, 2, 2, vec![0.0, 1.0, 0.0, 1.0]);
    cases.push(Case::new("tv 2x2", scalar(&total_variation(&tv.tensor()).unwrap()), 2.0, 1e-9));
    cases.push(Case::new(
        "tv nested loop",
        scalar(&total_variation(&y.tensor()).unwrap()),
        tv_oracle(&y),
        1e-6,
    ));

    let u = UnsupTerms {
        lsgan: t0(1.0),
        cls: t0(1.0),
        colorcyc: t0(1.0),
        msssim_loss: t0(1.0),
        id: t0(1.0),
    };
    cases.push(Case::new(
        "full_unsup unit terms",
        scalar(&full_unsup(&u, &UnsupWeights::default()).unwrap()),
        13.5,
        1e-9,
    ));
    let s = SupTerms {
        cgan: t0(1.0),
        color: t0(1.0),
        cyc: t0(1.0),
        id: t0(1.0),
        vgg: t0(1.0),
        tv: t0(1.0),
    };
    cases.push(Case::new(
        "full_sup unit terms",
        scalar(&full_sup(&s, &SupWeights::default()).unwrap()),
        1801.110001,
        1e-9,
    ));
    cases
}

pub fn label_pair(
    t: asymgan::generators::ArchTier,
    r: asymgan::generators::ArchTier,
    sharing: asymgan::generators::SharingMode,
    m: usize,
) -> asymgan::generators::GeneratorPairSpec {
    asymgan::generators::GeneratorPairSpec::new(
        t,
        r,
        sharing,
        asymgan::generators::GuidanceSpec::DomainLabel {
            num_domains: m,
            embed_dim: 64,
        },
    )
}

pub fn skeleton_pair(
    t: asymgan::generators::ArchTier,
    r: asymgan::generators::ArchTier,
    sharing: asymgan::generators::SharingMode,
) -> asymgan::generators::GeneratorPairSpec {
    asymgan::generators::GeneratorPairSpec::new(t, r, sharing, asymgan::generators::GuidanceSpec::Skeleton { channels: 3 })
}

/// Analytic Fréchet cases: identical, unit shift, commuting covariances.
pub fn frechet_cases() -> Vec<Case> {
    use asymgan::metrics::{frechet_distance, GaussianSummary};
    use nalgebra::{DMatrix, DVector};

    let g = |mean: Vec<f64>, cov: DMatrix<f64>| GaussianSummary {
        mean: DVector::from_vec(mean),
        covariance: cov,
        count: 100,
    };
    let d = 4;
    let sigma = rand_psd(7, d) + DMatrix::identity(d, d) * 0.1;
    let p = g(vec![0.3, -0.2, 0.5, 1.0], sigma.clone());
    let mut shift = vec![0.0; d];
    shift[0] = 1.0;
    vec![
        Case::new("identical summaries", frechet_distance(&p, &p).unwrap(), 0.0, 1e-6),
        Case::new(
            "unit shift, identity covariance",
            frechet_distance(&g(vec![0.0; d], DMatrix::identity(d, d)), &g(shift, DMatrix::identity(d, d))).unwrap(),
            1.0,
            1e-4,
        ),
        Case::new(
            "commuting covariances 4I vs I",
            frechet_distance(&g(vec![0.0; 2], DMatrix::identity(2, 2) * 4.0), &g(vec![0.0; 2], DMatrix::identity(2, 2)))
                .unwrap(),
            2.0,
            1e-4,
        ),
    ]
}
