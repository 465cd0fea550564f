use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{imageops::FilterType, RgbImage};

use super::{normalize, ImageTensor};
use crate::error::{shape_err, Error, Result};

/// Reads a PNG (or any format the `image` crate decodes), converts to RGB,
/// resizes to `size x size` when needed and normalizes to [-1, 1].
pub fn load_image_tensor(path: &Path, size: usize, device: &Device) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let img = if img.width() as usize != size || img.height() as usize != size {
        image::imageops::resize(&img, size as u32, size as u32, FilterType::Triangle)
    } else {
        img
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut planar = vec![0u8; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            planar[c * h * w + y as usize * w + x as usize] = p[c];
        }
    }
    normalize(&planar, (3, h, w), device)
}

/// Converts one `(c, h, w)` or `(1, c, h, w)` image in [-1, 1] to an RGB raster.
/// Single-channel inputs are replicated to gray.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let t = match t.rank() {
        4 if t.dim(0)? == 1 => t.squeeze(0)?,
        3 => t.clone(),
        _ => return shape_err(format!("expected a single image, got {:?}", t.dims())),
    };
    let (c, h, w) = t.dims3()?;
    if c != 1 && c != 3 {
        return shape_err(format!("cannot render {c}-channel tensor"));
    }
    let v: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let level = |x: f32| ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = if c == 3 {
                [
                    level(v[y * w + x]),
                    level(v[h * w + y * w + x]),
                    level(v[2 * h * w + y * w + x]),
                ]
            } else {
                let g = level(v[y * w + x]);
                [g, g, g]
            };
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    Ok(img)
}

pub fn save_image_tensor(t: &Tensor, path: &Path) -> Result<()> {
    tensor_to_rgb(t)?.save(path)?;
    Ok(())
}

/// Writes a grid of equally sized images; `rows[i][j]` lands at row `i`, column `j`.
pub fn save_image_grid(rows: &[Vec<Tensor>], path: &Path) -> Result<()> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    if rows.is_empty() || cols == 0 {
        return shape_err("empty image grid");
    }
    let first = tensor_to_rgb(&rows[0][0])?;
    let (cw, ch) = (first.width(), first.height());
    let mut canvas = RgbImage::new(cw * cols as u32, ch * rows.len() as u32);
    for (r, row) in rows.iter().enumerate() {
        for (c, t) in row.iter().enumerate() {
            let tile = tensor_to_rgb(t)?;
            if tile.width() != cw || tile.height() != ch {
                return shape_err("grid tiles differ in size");
            }
            image::imageops::replace(&mut canvas, &tile, (c as u32 * cw) as i64, (r as u32 * ch) as i64);
        }
    }
    canvas.save(path)?;
    Ok(())
}
