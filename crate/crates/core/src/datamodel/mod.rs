//! Core value types, dataset ingestion and synthetic corpora.

mod imageio;
mod manifest;
mod synth;

pub use imageio::{load_image_tensor, save_image_grid, save_image_tensor, tensor_to_rgb};
pub use manifest::{
    load_manifest, pairing_key, DatasetManifest, DatasetMode, Sample, Split, MANIFEST_FILE,
};
pub use synth::{hsv_to_rgb, rgb_to_hsv, synth_multidomain, synth_paired};

use candle_core::{DType, Device, Tensor};

use crate::error::{shape_err, validation_err, Error, Result};

/// Nominal dynamic range of images normalized to [-1, 1].
pub const DEFAULT_VALUE_RANGE: f64 = 2.0;

const RANGE_SLACK: f64 = 1e-6;

/// A batched `(batch, channels, height, width)` raster.
///
/// Images live in [-1, 1]; `value_range` is the dynamic range `L` that
/// similarity metrics use for their stabilising constants.
#[derive(Debug, Clone)]
pub struct ImageTensor {
    data: Tensor,
    value_range: f64,
}

impl ImageTensor {
    /// Wraps an image batch, checking rank, channel count, finiteness and range.
    pub fn new(data: Tensor) -> Result<Self> {
        let (_, c, _, _) = data.dims4().map_err(|_| {
            Error::Shape(format!("image tensor must be rank 4, got {:?}", data.dims()))
        })?;
        if c != 1 && c != 3 {
            return shape_err(format!("image tensor must have 1 or 3 channels, got {c}"));
        }
        let (lo, hi) = min_max(&data)?;
        if !lo.is_finite() || !hi.is_finite() {
            return validation_err("image tensor contains non-finite values");
        }
        if lo < -1.0 - RANGE_SLACK || hi > 1.0 + RANGE_SLACK {
            return validation_err(format!("image values outside [-1, 1]: [{lo}, {hi}]"));
        }
        Ok(Self {
            data,
            value_range: DEFAULT_VALUE_RANGE,
        })
    }

    /// Wraps an arbitrary-channel feature map. Only rank and finiteness are checked.
    pub fn feature_map(data: Tensor) -> Result<Self> {
        if data.rank() != 4 {
            return shape_err(format!("feature map must be rank 4, got {:?}", data.dims()));
        }
        let (lo, hi) = min_max(&data)?;
        if !lo.is_finite() || !hi.is_finite() {
            return validation_err("feature map contains non-finite values");
        }
        Ok(Self {
            data,
            value_range: DEFAULT_VALUE_RANGE,
        })
    }

    pub fn with_value_range(mut self, value_range: f64) -> Self {
        self.value_range = value_range;
        self
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn value_range(&self) -> f64 {
        self.value_range
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        // rank checked at construction
        self.data.dims4().expect("rank-4 image tensor")
    }
}

fn min_max(t: &Tensor) -> Result<(f64, f64)> {
    let flat = t.flatten_all()?.to_dtype(DType::F64)?;
    if flat.elem_count() == 0 {
        return Ok((0.0, 0.0));
    }
    let v: Vec<f64> = flat.to_vec1()?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x in v {
        if x.is_nan() {
            return Ok((f64::NAN, f64::NAN));
        }
        lo = lo.min(x);
        hi = hi.max(x);
    }
    Ok((lo, hi))
}

/// Maps a `(channels, height, width)` 0..255 raster to a `(1, c, h, w)` image in [-1, 1].
pub fn normalize(raw: &[u8], shape: (usize, usize, usize), device: &Device) -> Result<ImageTensor> {
    let (c, h, w) = shape;
    if raw.len() != c * h * w {
        return shape_err(format!(
            "raster has {} values, expected {}x{}x{}",
            raw.len(),
            c,
            h,
            w
        ));
    }
    let data: Vec<f32> = raw.iter().map(|&p| p as f32 / 127.5 - 1.0).collect();
    ImageTensor::new(Tensor::from_vec(data, (1, c, h, w), device)?)
}

/// Inverse of [`normalize`], rounding to the nearest level and clamping to 0..255.
pub fn denormalize(x: &ImageTensor) -> Result<Vec<u8>> {
    let v: Vec<f32> = x.tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
    Ok(v
        .into_iter()
        .map(|p| ((p + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
        .collect())
}

/// Splits a 3-channel batch into its red, green and blue planes.
pub fn channel_split(x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let dims = x.dims();
    if dims.len() != 4 || dims[1] != 3 {
        return shape_err(format!("channel split needs (n, 3, h, w), got {dims:?}"));
    }
    Ok((x.narrow(1, 0, 1)?, x.narrow(1, 1, 1)?, x.narrow(1, 2, 1)?))
}

pub fn channel_concat(r: &Tensor, g: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(Tensor::cat(&[r, g, b], 1)?)
}

/// Categorical domain identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DomainLabel {
    index: usize,
    num_domains: usize,
}

impl DomainLabel {
    pub fn new(index: usize, num_domains: usize) -> Result<Self> {
        if num_domains == 0 || index >= num_domains {
            return validation_err(format!(
                "domain index {index} out of range for {num_domains} domains"
            ));
        }
        Ok(Self { index, num_domains })
    }

    /// Parses a one-hot vector; anything other than a single 1 among 0s is rejected.
    pub fn from_one_hot(v: &[f32]) -> Result<Self> {
        let mut hot = None;
        for (i, &x) in v.iter().enumerate() {
            if x == 1.0 {
                if hot.is_some() {
                    return validation_err("one-hot vector has more than one hot entry");
                }
                hot = Some(i);
            } else if x != 0.0 {
                return validation_err(format!("one-hot vector has entry {x} at {i}"));
            }
        }
        match hot {
            Some(i) => Self::new(i, v.len()),
            None => validation_err("one-hot vector has no hot entry"),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn one_hot(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.num_domains];
        v[self.index] = 1.0;
        v
    }
}

/// Stacks labels into a `(batch, m)` one-hot matrix.
pub fn one_hot_batch(labels: &[DomainLabel], dtype: DType, device: &Device) -> Result<Tensor> {
    let Some(first) = labels.first() else {
        return validation_err("empty label batch");
    };
    let m = first.num_domains;
    let mut data = Vec::with_capacity(labels.len() * m);
    for l in labels {
        if l.num_domains != m {
            return validation_err("labels in a batch disagree on the domain count");
        }
        data.extend(l.one_hot());
    }
    Ok(Tensor::from_vec(data, (labels.len(), m), device)?.to_dtype(dtype)?)
}

/// Spatial conditioning map `(channels, height, width)` paired with one image.
#[derive(Debug, Clone)]
pub struct SkeletonMap {
    data: Tensor,
}

impl SkeletonMap {
    /// `image_hw` is the paired image's spatial size.
    pub fn new(data: Tensor, image_hw: (usize, usize)) -> Result<Self> {
        let (_, h, w) = data.dims3().map_err(|_| {
            Error::Shape(format!("skeleton must be rank 3, got {:?}", data.dims()))
        })?;
        if (h, w) != image_hw {
            return shape_err(format!(
                "skeleton is {h}x{w} but its image is {}x{}",
                image_hw.0, image_hw.1
            ));
        }
        Ok(Self { data })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    /// `(1, c, h, w)` view for batching.
    pub fn batched(&self) -> Result<Tensor> {
        Ok(self.data.unsqueeze(0)?)
    }
}
