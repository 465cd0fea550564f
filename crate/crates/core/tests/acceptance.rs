//! Acceptance run: one pass/fail line per criterion, non-zero exit on failure.

mod common;

use std::path::Path;
use std::time::Instant;

use asymgan::checkpoint::load_models;
use asymgan::datamodel::{synth_multidomain, synth_paired, DomainLabel};
use asymgan::discriminators::DiscriminatorSpec;
use asymgan::generators::{build_pair, ArchTier, Guidance, SharingMode};
use asymgan::gradcheck::{loss_suite, TOLERANCE};
use asymgan::losses::{ms_ssim, ssim, SsimConfig};
use asymgan::metrics::{classification_accuracy, ClassifierConfig};
use asymgan::training::{load_unpaired_tensors, train_loop, ModelSpecs, ReplayBuffer, StepReport, TrainConfig};
use candle_core::{DType, Device, Tensor};
use common::{label_pair, loss_oracle_cases, ms_ssim_oracle, scalar, skeleton_pair, Arr};

type Outcome = (bool, String);

fn within(got: usize, expect: f64, rel: f64) -> bool {
    (got as f64 - expect).abs() <= rel * expect
}

fn capacity() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, r_arch, expect_r) in [
        ("S1", ArchTier::TierI, 2.9e3),
        ("S2", ArchTier::TierII, 1.3e6),
        ("S3", ArchTier::TierIII, 8.4e6),
    ] {
        let pair = build_pair(&label_pair(ArchTier::TierIII, r_arch, SharingMode::None, 3), 3, 64, 0).unwrap();
        let (t, r) = (pair.translate.count_parameters(), pair.reconstruct.count_parameters());
        let pass = within(t + r, 8.4e6 + expect_r, 0.15) && within(t, 8.4e6, 0.15) && within(r, expect_r, 0.15);
        ok &= pass;
        notes.push(format!("{name} {t}+{r}"));
    }
    let sup = build_pair(
        &skeleton_pair(
            ArchTier::Resnet9 { base_width: 64 },
            ArchTier::Resnet9 { base_width: 4 },
            SharingMode::None,
        ),
        3,
        64,
        0,
    )
    .unwrap();
    let (t, r) = (sup.translate.count_parameters(), sup.reconstruct.count_parameters());
    ok &= within(t, 11.388e6, 0.05) && within(r, 0.046e6, 0.25);
    notes.push(format!("supervised {t}+{r}"));
    (ok, notes.join(", "))
}

fn loss_oracles() -> Outcome {
    let cases = loss_oracle_cases();
    let failed: Vec<String> = cases
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{} ({:e} > {:e})", c.name, c.error, c.tolerance))
        .collect();
    let worst = cases.iter().map(|c| c.error).fold(0.0, f64::max);
    if failed.is_empty() {
        (true, format!("{} cases, max error {worst:.2e}", cases.len()))
    } else {
        (false, format!("failed: {}", failed.join("; ")))
    }
}

fn gradients() -> Outcome {
    let results = loss_suite(0).unwrap();
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let ok = failed.is_empty() && results.iter().all(|r| r.max_rel_error < TOLERANCE);
    let detail = format!(
        "{} operations, worst {} at {:.2e}{}",
        results.len(),
        worst.name,
        worst.max_rel_error,
        if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) }
    );
    (ok, detail)
}

fn ssim_identities() -> Outcome {
    let cfg = SsimConfig::default();
    let a = Arr::random(200, 2, 3, 32, 32, -1.0, 1.0);
    let b = Arr::random(201, 2, 3, 32, 32, -1.0, 1.0);
    let (ta, tb) = (a.tensor(), b.tensor());
    let self_s = scalar(&ssim(&ta, &ta, &cfg).unwrap());
    let self_m = scalar(&ms_ssim(&ta, &ta, &cfg).unwrap());
    let sym_s = (scalar(&ssim(&ta, &tb, &cfg).unwrap()) - scalar(&ssim(&tb, &ta, &cfg).unwrap())).abs();
    let sym_m = (scalar(&ms_ssim(&ta, &tb, &cfg).unwrap()) - scalar(&ms_ssim(&tb, &ta, &cfg).unwrap())).abs();

    let big_a = Arr::random(202, 1, 3, 176, 176, -1.0, 1.0);
    let big_b = Arr::random(203, 1, 3, 176, 176, -1.0, 1.0);
    let big_b = Arr::new(1, 3, 176, 176, big_a.v.iter().zip(&big_b.v).map(|(p, q)| 0.7 * p + 0.3 * q).collect());
    let got = scalar(&ms_ssim(&big_a.tensor(), &big_b.tensor(), &cfg).unwrap());
    let reference = ms_ssim_oracle(&big_a, &big_b, &cfg.scale_weights, 2.0);
    let ok = (self_s - 1.0).abs() <= 1e-6
        && (self_m - 1.0).abs() <= 1e-6
        && sym_s <= 1e-7
        && sym_m <= 1e-7
        && (got - reference).abs() <= 1e-5;
    (
        ok,
        format!(
            "ssim(a,a)={self_s:.9}, ms_ssim(a,a)={self_m:.9}, asymmetry {:.1e}, 176px loop error {:.1e}",
            sym_s.max(sym_m),
            (got - reference).abs()
        ),
    )
}

fn replay_buffer() -> Outcome {
    let mut buf = ReplayBuffer::new(50, 42);
    let base = Tensor::ones((1, 1, 1, 1), DType::F64, &Device::Cpu).unwrap();
    let mut max_len = 0;
    for i in 0..50 {
        buf.query(&(&base * i as f64).unwrap());
        max_len = max_len.max(buf.len());
    }
    let mut historical = 0usize;
    let n = 10_000;
    for i in 0..n {
        let id = (1000 + i) as f64;
        let got = buf.query(&(&base * id).unwrap());
        if scalar(&got.flatten_all().unwrap().get(0).unwrap()) != id {
            historical += 1;
        }
        max_len = max_len.max(buf.len());
    }
    let rate = historical as f64 / n as f64;
    ((rate - 0.5).abs() <= 0.02 && max_len <= 50, format!("historical rate {rate:.4}, max size {max_len}"))
}

fn frechet() -> Outcome {
    let cases = common::frechet_cases();
    let ok = cases.iter().all(|c| c.passed());
    let detail = cases.iter().map(|c| format!("{} err {:.1e}", c.name, c.error)).collect::<Vec<_>>().join(", ");
    (ok, detail)
}

fn cycle_ratio(reports: &[StepReport]) -> f64 {
    let cyc: Vec<f64> = reports.iter().map(|r| r.get("cycle_l1").unwrap()).collect();
    let n = cyc.len();
    let first = cyc[..20].iter().sum::<f64>() / 20.0;
    let last = cyc[n - 20..].iter().sum::<f64>() / 20.0;
    last / first
}

fn convergence(root: &Path) -> Outcome {
    let manifest = synth_multidomain(&root.join("hue"), 3, 30, 64, 7).unwrap();
    let specs = ModelSpecs {
        generators: label_pair(ArchTier::TierI, ArchTier::TierI, SharingMode::None, 3),
        discriminator: DiscriminatorSpec::multidomain(3, 4).with_base_width(16),
    };
    let mut cfg = TrainConfig::unsupervised();
    cfg.learning_rate = 5e-4;
    cfg.max_steps = Some(200);
    cfg.seed = 1;
    let out = train_loop(&manifest, &specs, &cfg, &root.join("run7"), &mut []).unwrap();
    let ratio = cycle_ratio(&out.reports);

    let (images, labels) = load_unpaired_tensors(&manifest, 64).unwrap();
    let (_, pair, _) = load_models(&out.final_checkpoint).unwrap();
    let test = synth_multidomain(&root.join("hue_test"), 3, 20, 64, 99).unwrap();
    let (timg, tlab) = load_unpaired_tensors(&test, 64).unwrap();
    let mut translated = Vec::new();
    let mut intended = Vec::new();
    for (i, &src) in tlab.iter().enumerate() {
        let tgt = (src + 1 + i % 2) % 3;
        let z = Guidance::domains(&[DomainLabel::new(tgt, 3).unwrap()], DType::F32, &Device::Cpu).unwrap();
        translated.push(pair.translate.forward(&timg.narrow(0, i, 1).unwrap(), &z).unwrap());
        intended.push(tgt);
    }
    let translated = Tensor::cat(&translated, 0).unwrap();
    let acc = classification_accuracy(&images, &labels, &translated, &intended, 3, &ClassifierConfig::default())
        .unwrap();
    let ok = ratio < 0.5 && acc.top1 >= 1.0 / 3.0 + 0.3;
    (ok, format!("cycle ratio {ratio:.3}, translated top-1 {:.3}", acc.top1))
}

fn sharing() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (t, r) in [
        (ArchTier::TierIII, ArchTier::TierIII),
        (ArchTier::TierII, ArchTier::TierIII),
        (ArchTier::TierI, ArchTier::TierI),
    ] {
        let none = build_pair(&label_pair(t, r, SharingMode::None, 3), 3, 64, 0).unwrap();
        let partial = build_pair(&label_pair(t, r, SharingMode::PartialEncoder, 3), 3, 64, 0).unwrap();
        let expect = none.count_parameters() - none.translate.encoder_parameters();
        ok &= partial.count_parameters() == expect;
        notes.push(format!("{t}/{r} partial {} = {expect}", partial.count_parameters()));
    }
    for t in [ArchTier::TierI, ArchTier::TierII, ArchTier::TierIII] {
        let full = build_pair(&label_pair(t, t, SharingMode::Full, 3), 3, 64, 0).unwrap();
        let single = build_pair(&label_pair(t, t, SharingMode::None, 3), 3, 64, 0).unwrap();
        ok &= full.count_parameters() == single.translate.count_parameters();
        notes.push(format!("{t} full {}", full.count_parameters()));
    }
    (ok, notes.join(", "))
}

fn determinism(root: &Path) -> Outcome {
    let manifest = synth_multidomain(&root.join("det"), 3, 4, 32, 3).unwrap();
    let specs = ModelSpecs {
        generators: label_pair(ArchTier::TierI, ArchTier::TierI, SharingMode::None, 3),
        discriminator: DiscriminatorSpec::multidomain(3, 3).with_base_width(16),
    };
    let mut cfg = TrainConfig::unsupervised();
    cfg.max_steps = Some(10);
    cfg.seed = 5;
    let a = train_loop(&manifest, &specs, &cfg, &root.join("det_a"), &mut []).unwrap();
    let b = train_loop(&manifest, &specs, &cfg, &root.join("det_b"), &mut []).unwrap();
    let mut worst = 0.0f64;
    let mut ok = a.reports.len() == 10 && b.reports.len() == 10;
    for (ra, rb) in a.reports.iter().zip(&b.reports) {
        ok &= ra.losses.len() == rb.losses.len();
        for (k, va) in &ra.losses {
            let d = rb.losses.get(k).map(|vb| (va - vb).abs()).unwrap_or(f64::INFINITY);
            worst = worst.max(d);
        }
    }
    (ok && worst <= 1e-5, format!("10 steps, max component difference {worst:.1e}"))
}

fn supervised(root: &Path) -> Outcome {
    let manifest = synth_paired(&root.join("paired"), 5, 4, 32, 11).unwrap();
    let specs = ModelSpecs {
        generators: skeleton_pair(
            ArchTier::Resnet9 { base_width: 8 },
            ArchTier::Resnet9 { base_width: 4 },
            SharingMode::None,
        ),
        discriminator: DiscriminatorSpec::triplet(3, 3).with_base_width(16),
    };
    let mut cfg = TrainConfig::supervised();
    cfg.max_steps = Some(100);
    cfg.epochs = 1000;
    cfg.seed = 2;
    let out = match train_loop(&manifest, &specs, &cfg, &root.join("run10"), &mut []) {
        Ok(o) => o,
        Err(e) => return (false, format!("training error: {e}")),
    };
    let finite = out.reports.iter().all(|r| r.losses.values().all(|v| v.is_finite()));
    let color: Vec<f64> = out.reports.iter().map(|r| r.get("color").unwrap()).collect();
    let n = color.len();
    let first = color[..10].iter().sum::<f64>() / 10.0;
    let last = color[n - 10..].iter().sum::<f64>() / 10.0;
    let reduction = 1.0 - last / first;
    (
        finite && n == 100 && reduction >= 0.3,
        format!("{n} steps, colour loss {first:.4} -> {last:.4} ({:.1}% lower)", 100.0 * reduction),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let root = dir.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("parameter capacity", Box::new(capacity)),
        ("loss oracle suite", Box::new(loss_oracles)),
        ("gradient suite", Box::new(gradients)),
        ("SSIM/MS-SSIM identities", Box::new(ssim_identities)),
        ("replay buffer statistics", Box::new(replay_buffer)),
        ("Frechet analytic cases", Box::new(frechet)),
        ("desk-scale convergence", Box::new(|| convergence(root))),
        ("sharing-mode arithmetic", Box::new(sharing)),
        ("determinism", Box::new(|| determinism(root))),
        ("supervised smoke", Box::new(|| supervised(root))),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = check();
        failures += usize::from(!ok);
        println!(
            "[{}] {:>2}. {name}: {detail} ({:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
