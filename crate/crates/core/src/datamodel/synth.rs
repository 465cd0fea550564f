//! Procedural corpora for desk-scale experiments.
//!
//! `synth_multidomain` draws random shape scenes whose hues sit in a narrow
//! band around 0° and rotates every hue by `k * 360 / m` for domain `k`.
//! `synth_paired` draws stick-figure hands: each sample is a rendered hand
//! image plus its skeleton raster, grouped into subjects that share colours.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, DatasetMode, Sample, Split, MANIFEST_FILE};
use crate::error::{validation_err, Error, Result};

/// Half-width of the base hue band, in degrees.
const HUE_BAND: f64 = 10.0;

/// `h` in degrees (any real), `s`, `v` in [0, 1]; returns RGB in [0, 1].
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Inverse of [`hsv_to_rgb`]; hue in [0, 360).
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h.rem_euclid(360.0), s, max)
}

fn to_u8(x: f64) -> u8 {
    (x * 255.0).round().clamp(0.0, 255.0) as u8
}

fn ingestion(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Ingestion(format!("{}: {e}", path.display()))
}

#[derive(Clone, Copy)]
enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }
}

fn draw_scene(rng: &mut ChaCha8Rng, size: usize, hue_shift: f64) -> RgbImage {
    let s = size as f64;
    let bg = (
        rng.random_range(-HUE_BAND..HUE_BAND),
        rng.random_range(0.35..0.6),
        rng.random_range(0.25..0.55),
    );
    let n_shapes = rng.random_range(3..=5);
    let shapes: Vec<(Shape, (f64, f64, f64))> = (0..n_shapes)
        .map(|_| {
            let shape = if rng.random_bool(0.5) {
                Shape::Disk {
                    cx: rng.random_range(0.0..s),
                    cy: rng.random_range(0.0..s),
                    r: rng.random_range(s / 10.0..s / 4.0),
                }
            } else {
                let (x0, y0) = (rng.random_range(0.0..s * 0.8), rng.random_range(0.0..s * 0.8));
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.random_range(s / 8.0..s / 2.5),
                    y1: y0 + rng.random_range(s / 8.0..s / 2.5),
                }
            };
            let colour = (
                rng.random_range(-HUE_BAND..HUE_BAND),
                rng.random_range(0.6..1.0),
                rng.random_range(0.55..1.0),
            );
            (shape, colour)
        })
        .collect();
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (h, sat, val) = shapes
                .iter()
                .rev()
                .find(|(sh, _)| sh.contains(px, py))
                .map(|(_, c)| *c)
                .unwrap_or(bg);
            let (r, g, b) = hsv_to_rgb(h + hue_shift, sat, val);
            img.put_pixel(x as u32, y as u32, Rgb([to_u8(r), to_u8(g), to_u8(b)]));
        }
    }
    img
}

/// Writes `m` hue-rotated domains of `n_per_domain` images to `out/domain_<k>/`.
pub fn synth_multidomain(
    out: &Path,
    m: usize,
    n_per_domain: usize,
    size: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if m < 2 {
        return validation_err(format!("need at least 2 domains, got {m}"));
    }
    if size < 32 {
        return validation_err(format!("image size must be at least 32, got {size}"));
    }
    let mut domains = Vec::with_capacity(m);
    let mut samples = Vec::with_capacity(m * n_per_domain);
    for k in 0..m {
        let name = format!("domain_{k}");
        let dir = out.join(&name);
        fs::create_dir_all(&dir).map_err(|e| ingestion(&dir, e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(k as u64));
        let shift = k as f64 * 360.0 / m as f64;
        for i in 0..n_per_domain {
            let path = dir.join(format!("img_{i:04}.png"));
            draw_scene(&mut rng, size, shift)
                .save(&path)
                .map_err(|e| ingestion(&path, e))?;
            samples.push(Sample {
                image: path,
                domain: Some(k),
                skeleton: None,
                split: None,
            });
        }
        domains.push(name);
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        mode: DatasetMode::UnpairedMultidomain,
        domains,
        samples,
        image_size: size,
    };
    let path = out.join(MANIFEST_FILE);
    manifest.write_json(&path).map_err(|e| ingestion(&path, e))?;
    Ok(manifest)
}

struct Hand {
    palm: (f64, f64),
    palm_r: f64,
    /// Per finger: knuckle, middle joint, tip.
    fingers: Vec<[(f64, f64); 3]>,
}

fn draw_hand_pose(rng: &mut ChaCha8Rng, size: usize) -> Hand {
    let s = size as f64;
    let palm = (
        s * 0.5 + rng.random_range(-0.08..0.08) * s,
        s * 0.62 + rng.random_range(-0.06..0.06) * s,
    );
    let palm_r = s * 0.13;
    let fingers = (0..5)
        .map(|f| {
            let base = (-160.0 + 35.0 * f as f64 + rng.random_range(-10.0..10.0)) * PI / 180.0;
            let knuckle = (palm.0 + palm_r * base.cos(), palm.1 + palm_r * base.sin());
            let a1 = base + rng.random_range(-0.35..0.35);
            let l1 = s * rng.random_range(0.10..0.15);
            let mid = (knuckle.0 + l1 * a1.cos(), knuckle.1 + l1 * a1.sin());
            let a2 = a1 + rng.random_range(-0.7..0.7);
            let l2 = s * rng.random_range(0.07..0.11);
            let tip = (mid.0 + l2 * a2.cos(), mid.1 + l2 * a2.sin());
            [knuckle, mid, tip]
        })
        .collect();
    Hand {
        palm,
        palm_r,
        fingers,
    }
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

fn render_hand(hand: &Hand, size: usize, skin: (f64, f64, f64), bg: (f64, f64, f64)) -> RgbImage {
    let width = size as f64 * 0.045;
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d_palm = ((p.0 - hand.palm.0).powi(2) + (p.1 - hand.palm.1).powi(2)).sqrt();
            let mut inside = d_palm <= hand.palm_r;
            for f in &hand.fingers {
                if seg_dist(p, hand.palm, f[0]) <= width
                    || seg_dist(p, f[0], f[1]) <= width
                    || seg_dist(p, f[1], f[2]) <= width * 0.9
                {
                    inside = true;
                }
            }
            let (h, s, v) = if inside {
                // mild vertical shading
                (skin.0, skin.1, skin.2 * (0.85 + 0.15 * (1.0 - y as f64 / size as f64)))
            } else {
                bg
            };
            let (r, g, b) = hsv_to_rgb(h, s, v);
            img.put_pixel(x as u32, y as u32, Rgb([to_u8(r), to_u8(g), to_u8(b)]));
        }
    }
    img
}

fn render_skeleton(hand: &Hand, size: usize) -> RgbImage {
    let mut img = RgbImage::new(size as u32, size as u32);
    let line = 0.9;
    let joint = (size as f64 * 0.025).max(1.2);
    for y in 0..size {
        for x in 0..size {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let mut px = [0u8; 3];
            for (f, pts) in hand.fingers.iter().enumerate() {
                let hue = f as f64 * 72.0;
                if seg_dist(p, hand.palm, pts[0]) <= line
                    || seg_dist(p, pts[0], pts[1]) <= line
                    || seg_dist(p, pts[1], pts[2]) <= line
                {
                    let (r, g, b) = hsv_to_rgb(hue, 1.0, 1.0);
                    px = [to_u8(r), to_u8(g), to_u8(b)];
                }
            }
            let joints = std::iter::once(hand.palm).chain(hand.fingers.iter().flatten().copied());
            for j in joints {
                if ((p.0 - j.0).powi(2) + (p.1 - j.1).powi(2)).sqrt() <= joint {
                    px = [255, 255, 255];
                }
            }
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

/// Writes a paired image/skeleton corpus in the `{train,test}/{images,skeletons}` layout.
///
/// Every subject has its own skin and background colours and
/// `poses_per_subject` random hand poses; the last fifth of the subjects
/// (at least one) form the test split.
pub fn synth_paired(
    out: &Path,
    n_subjects: usize,
    poses_per_subject: usize,
    size: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if n_subjects < 2 || poses_per_subject < 2 {
        return validation_err("need at least 2 subjects with at least 2 poses each");
    }
    if size < 32 {
        return validation_err(format!("image size must be at least 32, got {size}"));
    }
    let n_test = (n_subjects / 5).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for subject in 0..n_subjects {
        let split = if subject >= n_subjects - n_test {
            Split::Test
        } else {
            Split::Train
        };
        let base = out.join(split.dir_name());
        let (img_dir, skel_dir) = (base.join("images"), base.join("skeletons"));
        fs::create_dir_all(&img_dir).map_err(|e| ingestion(&img_dir, e))?;
        fs::create_dir_all(&skel_dir).map_err(|e| ingestion(&skel_dir, e))?;
        let skin = (
            rng.random_range(0.0..360.0),
            rng.random_range(0.35..0.7),
            rng.random_range(0.65..0.95),
        );
        let bg = (
            rng.random_range(0.0..360.0),
            rng.random_range(0.1..0.3),
            rng.random_range(0.2..0.4),
        );
        for pose in 0..poses_per_subject {
            let hand = draw_hand_pose(&mut rng, size);
            let stem = format!("{subject:03}_{pose:02}");
            let image = img_dir.join(format!("img_{stem}.png"));
            let skeleton = skel_dir.join(format!("skeleton_{stem}.png"));
            render_hand(&hand, size, skin, bg)
                .save(&image)
                .map_err(|e| ingestion(&image, e))?;
            render_skeleton(&hand, size)
                .save(&skeleton)
                .map_err(|e| ingestion(&skeleton, e))?;
            samples.push(Sample {
                image,
                domain: None,
                skeleton: Some(skeleton),
                split: Some(split),
            });
        }
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        mode: DatasetMode::PairedSkeleton,
        domains: Vec::new(),
        samples,
        image_size: size,
    };
    let path = out.join(MANIFEST_FILE);
    manifest.write_json(&path).map_err(|e| ingestion(&path, e))?;
    Ok(manifest)
}
