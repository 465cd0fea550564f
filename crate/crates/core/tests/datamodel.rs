use asymgan::datamodel::*;
use candle_core::{DType, Device};
use proptest::prelude::*;

/// Hue in degrees from 8-bit RGB, computed from the hexcone formula.
fn hue_deg(r: u8, g: u8, b: u8) -> Option<f64> {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    if c < 1e-9 {
        return None;
    }
    let h = if max == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    Some(h * 60.0)
}

fn mean_hue(path: &std::path::Path) -> f64 {
    let img = image::open(path).unwrap().to_rgb8();
    let (mut sx, mut sy) = (0.0, 0.0);
    for p in img.pixels() {
        if let Some(h) = hue_deg(p[0], p[1], p[2]) {
            sx += h.to_radians().cos();
            sy += h.to_radians().sin();
        }
    }
    sy.atan2(sx).to_degrees()
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[test]
fn synthetic_domains_have_rotated_hues() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_multidomain(dir.path(), 3, 6, 32, 4).unwrap();
    assert_eq!(m.num_domains(), 3);
    for s in &m.samples {
        let k = s.domain.unwrap();
        let h = mean_hue(&s.image);
        assert!(angle_diff(h, k as f64 * 120.0) <= 10.0, "domain {k} hue {h}");
    }
}

#[test]
fn manifest_reload_matches() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_multidomain(dir.path(), 2, 3, 32, 0).unwrap();
    let again = load_manifest(dir.path(), DatasetMode::UnpairedMultidomain).unwrap();
    assert_eq!(again.domains, m.domains);
    assert_eq!(again.samples.len(), 6);
}

#[test]
fn paired_corpus_pairs_within_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_paired(dir.path(), 5, 3, 32, 0).unwrap();
    let train = m.paired_partners(Split::Train);
    let test = m.paired_partners(Split::Test);
    assert!(!train.is_empty() && !test.is_empty());
    for (a, b) in train.iter().chain(&test) {
        assert_ne!(a, b);
        assert!(m.samples[*a].skeleton.is_some());
        let subject = |i: usize| pairing_key(&m.samples[i].image).rsplit_once('_').unwrap().0.to_string();
        assert_eq!(subject(*a), subject(*b));
    }
}

#[test]
fn pixel_127_normalises_below_zero() {
    let x = normalize(&[127, 127, 127], (3, 1, 1), &Device::Cpu).unwrap();
    let v: Vec<f32> = x.tensor().flatten_all().unwrap().to_vec1().unwrap();
    assert!((v[0] as f64 - (127.0 / 127.5 - 1.0)).abs() < 1e-7);
}

#[test]
fn loaded_images_are_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_multidomain(dir.path(), 2, 1, 32, 0).unwrap();
    let t = load_image_tensor(&m.samples[0].image, 16, &Device::Cpu).unwrap();
    assert_eq!(t.dims(), (1, 3, 16, 16));
    let max: f32 = t.tensor().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
    assert!(max <= 1.0);
}

proptest! {
    #[test]
    fn normalize_round_trips(raw in proptest::collection::vec(any::<u8>(), 12)) {
        let x = normalize(&raw, (3, 2, 2), &Device::Cpu).unwrap();
        prop_assert_eq!(denormalize(&x).unwrap(), raw);
    }

    #[test]
    fn one_hot_round_trips(m in 2usize..10, k in 0usize..10) {
        let k = k % m;
        let l = DomainLabel::new(k, m).unwrap();
        prop_assert_eq!(DomainLabel::from_one_hot(&l.one_hot()).unwrap(), l);
        let t = one_hot_batch(&[l], DType::F32, &Device::Cpu).unwrap();
        let s: f32 = t.sum_all().unwrap().to_scalar().unwrap();
        prop_assert_eq!(s, 1.0);
    }

    #[test]
    fn channel_split_concat_round_trips(v in proptest::collection::vec(-1.0f32..1.0, 3 * 9)) {
        let t = candle_core::Tensor::from_vec(v.clone(), (1, 3, 3, 3), &Device::Cpu).unwrap();
        let (r, g, b) = channel_split(&t).unwrap();
        let back: Vec<f32> = channel_concat(&r, &g, &b).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn hsv_matches_independent_hue(h in 0.0f64..360.0, s in 0.2f64..1.0, v in 0.2f64..1.0) {
        let (r, g, b) = hsv_to_rgb(h, s, v);
        let (h2, s2, v2) = rgb_to_hsv(r, g, b);
        prop_assert!(angle_diff(h, h2) < 1e-6);
        prop_assert!((s - s2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
    }
}
