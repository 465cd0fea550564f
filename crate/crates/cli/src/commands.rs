use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use asymgan::checkpoint::{load_models, read_checkpoint_meta, CheckpointMeta};
use asymgan::datamodel::{
    load_manifest, save_image_grid, save_image_tensor, synth_multidomain, synth_paired, DatasetManifest, DatasetMode,
    DomainLabel, Split,
};
use asymgan::discriminators::{build_discriminator, DiscriminatorKind, DiscriminatorSpec};
use asymgan::features::{ExtractorParams, ExtractorRegistry};
use asymgan::generators::{build_pair, ArchTier, GeneratorPair, GeneratorPairSpec, GuidanceSpec, Guidance, SharingMode};
use asymgan::gradcheck::loss_suite;
use asymgan::losses::{cycle_l1, ssim, SsimConfig};
use asymgan::metrics::{frechet_distance_images, inception_style_score, psnr, DomainClassifier};
use asymgan::training::{load_paired_tensors, load_unpaired_tensors, train_loop, ModelSpecs, StepReport, TrainCallback};
use candle_core::{DType, Device, Tensor};
use serde_json::json;

use crate::config::{default_specs, Config, Mode};
use crate::{Command, Common, Failure};

type Outcome = Result<(), Failure>;

/// Peak-to-peak range of normalised pixels.
const PIXEL_RANGE: f64 = 2.0;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` does not exist", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` is not a directory", path.display())))
    }
}

fn seed(common: &Common, config: &Config) -> u64 {
    common.seed.or(config.seed).unwrap_or(0)
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::SynthData { out, mode, common } => synth_data(&out, mode, &common),
        Command::Train {
            data,
            out,
            mode,
            epochs,
            max_steps,
            common,
        } => train(&data, &out, mode, epochs, max_steps, &common),
        Command::Translate {
            checkpoint,
            data,
            out,
            target_domain,
            limit,
            common,
        } => translate(&checkpoint, &data, &out, target_domain.as_deref(), limit, &common),
        Command::Evaluate {
            checkpoint,
            data,
            out,
            target_domain,
            common,
        } => evaluate(&checkpoint, &data, out.as_deref(), target_domain.as_deref(), &common),
        Command::Inspect {
            spec,
            checkpoint,
            domains,
            image_size,
            common,
        } => inspect(spec.as_deref(), checkpoint.as_deref(), domains, image_size, &common),
        Command::Gradcheck { common } => gradcheck(&common),
    }
}

fn synth_data(out: &Path, mode: Mode, common: &Common) -> Outcome {
    let config = Config::load(common.config.as_deref())?;
    let s = &config.synth;
    let seed = seed(common, &config);
    let manifest = match mode {
        Mode::Unpaired => synth_multidomain(out, s.domains, s.per_domain, s.image_size, seed)?,
        Mode::Paired => synth_paired(out, s.subjects, s.poses_per_subject, s.image_size, seed)?,
    };
    println!(
        "wrote {} images ({} domains) to {}",
        manifest.samples.len(),
        manifest.num_domains().max(1),
        out.display()
    );
    Ok(())
}

fn detect_mode(data: &Path) -> Mode {
    if data.join("train").join("images").is_dir() {
        Mode::Paired
    } else {
        Mode::Unpaired
    }
}

fn dataset_mode(mode: Mode) -> DatasetMode {
    match mode {
        Mode::Unpaired => DatasetMode::UnpairedMultidomain,
        Mode::Paired => DatasetMode::PairedSkeleton,
    }
}

struct Progress {
    every: usize,
}

impl TrainCallback for Progress {
    fn on_step(&mut self, report: &StepReport) -> asymgan::Result<()> {
        if report.step % self.every == 0 {
            let total = report.get("g_total").unwrap_or(f64::NAN);
            log::info!("step {} epoch {}: g_total {total:.4}", report.step, report.epoch);
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, path: &Path, epoch: usize) -> asymgan::Result<()> {
        println!("epoch {epoch}: checkpoint {}", path.display());
        Ok(())
    }
}

fn train(
    data: &Path,
    out: &Path,
    mode: Option<Mode>,
    epochs: Option<usize>,
    max_steps: Option<usize>,
    common: &Common,
) -> Outcome {
    require_dir(data, "data directory")?;
    let config = Config::load(common.config.as_deref())?;
    let mode = mode.or(config.mode).unwrap_or_else(|| detect_mode(data));
    let manifest = load_manifest(data, dataset_mode(mode))?;
    let mut cfg = config.train_config(mode)?;
    if let Some(s) = common.seed.or(config.seed) {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if max_steps.is_some() {
        cfg.max_steps = max_steps;
    }
    let size = cfg.image_size.unwrap_or(manifest.image_size);
    let specs = config.model_specs(mode, manifest.num_domains(), size);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let resolved = json!({ "mode": mode, "models": specs, "train": cfg });
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&resolved).map_err(anyhow::Error::from)?)
        .context("writing resolved config")?;
    let mut progress = Progress { every: 50 };
    let outcome = train_loop(&manifest, &specs, &cfg, out, &mut [&mut progress])?;
    println!(
        "trained {} steps; final checkpoint {}",
        outcome.reports.len(),
        outcome.final_checkpoint.display()
    );
    Ok(())
}

fn checkpoint_mode(meta: &CheckpointMeta) -> Mode {
    match meta.generators.guidance {
        GuidanceSpec::DomainLabel { .. } => Mode::Unpaired,
        GuidanceSpec::Skeleton { .. } => Mode::Paired,
    }
}

fn domain_guidance(k: usize, m: usize) -> Result<Guidance, Failure> {
    Ok(Guidance::domains(&[DomainLabel::new(k, m)?], DType::F32, &Device::Cpu)?)
}

fn target_indices(meta: &CheckpointMeta, target: Option<&str>) -> Result<Vec<usize>, Failure> {
    match target {
        Some(name) => meta
            .domains
            .iter()
            .position(|d| d == name)
            .map(|k| vec![k])
            .ok_or_else(|| usage(format!("unknown target domain `{name}`; checkpoint has {:?}", meta.domains))),
        None => Ok((0..meta.domains.len()).collect()),
    }
}

/// Real images with labels remapped into the checkpoint's domain order.
fn unpaired_inputs(meta: &CheckpointMeta, data: &Path) -> Result<(Tensor, Vec<usize>), Failure> {
    let manifest = load_manifest(data, DatasetMode::UnpairedMultidomain)?;
    let (images, labels) = load_unpaired_tensors(&manifest, meta.image_size)?;
    let labels = labels
        .iter()
        .map(|&k| {
            let name = &manifest.domains[k];
            meta.domains
                .iter()
                .position(|d| d == name)
                .ok_or_else(|| anyhow!("dataset domain `{name}` is unknown to the checkpoint"))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((images, labels))
}

fn paired_inputs(meta: &CheckpointMeta, data: &Path) -> Result<(Tensor, Tensor, Vec<(usize, usize)>), Failure> {
    let manifest: DatasetManifest = load_manifest(data, DatasetMode::PairedSkeleton)?;
    let split = if manifest.paired_partners(Split::Test).is_empty() {
        Split::Train
    } else {
        Split::Test
    };
    Ok(load_paired_tensors(&manifest, split, meta.image_size)?)
}

fn spread(n: usize, limit: usize) -> Vec<usize> {
    let k = limit.min(n);
    (0..k).map(|i| i * n / k).collect()
}

fn translate(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    target: Option<&str>,
    limit: usize,
    common: &Common,
) -> Outcome {
    require_file(checkpoint, "checkpoint")?;
    require_dir(data, "data directory")?;
    if limit == 0 {
        return Err(usage("--limit must be at least 1"));
    }
    let _config = Config::load(common.config.as_deref())?;
    let (meta, pair, _) = load_models(checkpoint)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rows = match checkpoint_mode(&meta) {
        Mode::Unpaired => translate_unpaired(&meta, &pair, data, out, target, limit)?,
        Mode::Paired => {
            if target.is_some() {
                return Err(usage("--target-domain applies to unpaired checkpoints only"));
            }
            translate_paired(&meta, &pair, data, out, limit)?
        }
    };
    let grid = out.join("grid.png");
    save_image_grid(&rows, &grid)?;
    println!("wrote {} rows to {}", rows.len(), grid.display());
    Ok(())
}

fn translate_unpaired(
    meta: &CheckpointMeta,
    pair: &GeneratorPair,
    data: &Path,
    out: &Path,
    target: Option<&str>,
    limit: usize,
) -> Result<Vec<Vec<Tensor>>, Failure> {
    let targets = target_indices(meta, target)?;
    let m = meta.domains.len();
    let (images, labels) = unpaired_inputs(meta, data)?;
    let mut rows = Vec::new();
    for (row, i) in spread(labels.len(), limit).into_iter().enumerate() {
        let x = images.narrow(0, i, 1).map_err(anyhow::Error::from)?;
        let mut cells = vec![x.clone()];
        let mut first = None;
        for &t in &targets {
            let y = pair.translate.forward(&x, &domain_guidance(t, m)?)?;
            save_image_tensor(&y, &out.join(format!("{row:03}_to_{}.png", meta.domains[t])))?;
            first.get_or_insert_with(|| y.clone());
            cells.push(y);
        }
        if let Some(y) = first {
            cells.push(pair.reconstruct.forward(&y, &domain_guidance(labels[i], m)?)?);
        }
        rows.push(cells);
    }
    Ok(rows)
}

fn translate_paired(
    meta: &CheckpointMeta,
    pair: &GeneratorPair,
    data: &Path,
    out: &Path,
    limit: usize,
) -> Result<Vec<Vec<Tensor>>, Failure> {
    let (images, skeletons, pairs) = paired_inputs(meta, data)?;
    let pick = |t: &Tensor, i: usize| t.narrow(0, i, 1).map_err(anyhow::Error::from);
    let mut rows = Vec::new();
    for (row, k) in spread(pairs.len(), limit).into_iter().enumerate() {
        let (a, b) = pairs[k];
        let (x, l_x, y, l_y) = (pick(&images, a)?, pick(&skeletons, a)?, pick(&images, b)?, pick(&skeletons, b)?);
        let y_prime = pair.translate.forward(&x, &Guidance::Skeleton(l_y))?;
        let x_hat = pair.reconstruct.forward(&y_prime, &Guidance::Skeleton(l_x))?;
        save_image_tensor(&y_prime, &out.join(format!("{row:03}_translated.png")))?;
        rows.push(vec![x, y_prime, x_hat, y]);
    }
    Ok(rows)
}

fn evaluate(checkpoint: &Path, data: &Path, out: Option<&Path>, target: Option<&str>, common: &Common) -> Outcome {
    require_file(checkpoint, "checkpoint")?;
    require_dir(data, "data directory")?;
    let config = Config::load(common.config.as_deref())?;
    let (meta, pair, _) = load_models(checkpoint)?;
    let extractor = ExtractorRegistry::default().create(
        &config.evaluate.extractor,
        &ExtractorParams {
            seed: seed(common, &config),
            channels: meta.image_channels,
            image_size: (meta.image_size, meta.image_size),
            dtype: DType::F32,
            device: Device::Cpu,
        },
    )?;
    let ssim_cfg = SsimConfig::default();
    let report = match checkpoint_mode(&meta) {
        Mode::Unpaired => {
            let targets = target_indices(&meta, target)?;
            let m = meta.domains.len();
            let (images, labels) = unpaired_inputs(&meta, data)?;
            let mut fakes = Vec::new();
            let mut intended = Vec::new();
            let mut recon = Vec::new();
            for (i, &src) in labels.iter().enumerate() {
                let x = images.narrow(0, i, 1).map_err(anyhow::Error::from)?;
                for &t in targets.iter().filter(|&&t| t != src) {
                    let y = pair.translate.forward(&x, &domain_guidance(t, m)?)?;
                    recon.push(pair.reconstruct.forward(&y, &domain_guidance(src, m)?)?);
                    fakes.push(y);
                    intended.push(t);
                }
            }
            if fakes.is_empty() {
                return Err(Failure::Runtime(anyhow!("no image has a source domain different from the target")));
            }
            let fakes = Tensor::cat(&fakes, 0).map_err(anyhow::Error::from)?;
            let recon = Tensor::cat(&recon, 0).map_err(anyhow::Error::from)?;
            let rows = Tensor::new(source_rows(&labels, &targets).as_slice(), &Device::Cpu).map_err(anyhow::Error::from)?;
            let originals = images.index_select(&rows, 0).map_err(anyhow::Error::from)?;
            let clf = DomainClassifier::train(&images, &labels, m, &config.evaluate.classifier)?;
            let (top1, top5) = clf.accuracy(&fakes, &intended, 5)?;
            let (is_mean, is_std) = inception_style_score(&clf.probabilities(&fakes)?, config.evaluate.splits)?;
            json!({
                "mode": "unpaired",
                "checkpoint": checkpoint,
                "extractor": extractor.name(),
                "samples": { "real": labels.len(), "generated": intended.len() },
                "metrics": {
                    "frechet_distance": frechet_distance_images(&images, &fakes, extractor.as_ref())?,
                    "inception_style_score": { "mean": is_mean, "std": is_std },
                    "classification_top1": top1,
                    "classification_top5": (m > 5).then_some(top5),
                    "cycle_l1": scalar(&cycle_l1(&recon, &originals)?)?,
                    "reconstruction_psnr": psnr(&recon, &originals, PIXEL_RANGE)?,
                }
            })
        }
        Mode::Paired => {
            if target.is_some() {
                return Err(usage("--target-domain applies to unpaired checkpoints only"));
            }
            let (images, skeletons, pairs) = paired_inputs(&meta, data)?;
            let pick = |t: &Tensor, idx: Vec<u32>| -> anyhow::Result<Tensor> {
                Ok(t.index_select(&Tensor::new(idx.as_slice(), &Device::Cpu)?, 0)?)
            };
            let a: Vec<u32> = pairs.iter().map(|p| p.0 as u32).collect();
            let b: Vec<u32> = pairs.iter().map(|p| p.1 as u32).collect();
            let (x, l_x) = (pick(&images, a.clone())?, pick(&skeletons, a)?);
            let (y, l_y) = (pick(&images, b.clone())?, pick(&skeletons, b)?);
            let y_prime = pair.translate.forward(&x, &Guidance::Skeleton(l_y))?;
            let x_hat = pair.reconstruct.forward(&y_prime, &Guidance::Skeleton(l_x))?;
            json!({
                "mode": "paired",
                "checkpoint": checkpoint,
                "extractor": extractor.name(),
                "samples": { "real": pairs.len(), "generated": pairs.len() },
                "metrics": {
                    "frechet_distance": frechet_distance_images(&y, &y_prime, extractor.as_ref())?,
                    "psnr": psnr(&y_prime, &y, PIXEL_RANGE)?,
                    "ssim": scalar(&ssim(&y_prime, &y, &ssim_cfg)?)?,
                    "cycle_l1": scalar(&cycle_l1(&x_hat, &x)?)?,
                }
            })
        }
    };
    let text = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
    if let Some(path) = out {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

/// Row of the source image behind every generated sample, in generation order.
fn source_rows(labels: &[usize], targets: &[usize]) -> Vec<u32> {
    labels
        .iter()
        .enumerate()
        .flat_map(|(i, &s)| std::iter::repeat_n(i as u32, targets.iter().filter(|&&t| t != s).count()))
        .collect()
}

fn scalar(t: &Tensor) -> anyhow::Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn preset(name: &str, domains: usize, image_size: usize) -> Option<ModelSpecs> {
    let label = |r: ArchTier| {
        let mut s = default_specs(Mode::Unpaired, domains, image_size);
        s.generators.reconstruct_arch = r;
        s
    };
    match name {
        "s1" => Some(label(ArchTier::TierI)),
        "s2" => Some(label(ArchTier::TierII)),
        "s3" => Some(label(ArchTier::TierIII)),
        "supervised" => Some(default_specs(Mode::Paired, domains, image_size)),
        _ => None,
    }
}

/// Reads either a full model description or a bare generator pair.
fn read_spec(path: &Path, domains: usize, image_size: usize) -> Result<(GeneratorPairSpec, Option<DiscriminatorSpec>), Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(specs) = serde_json::from_str::<ModelSpecs>(&text) {
        return Ok((specs.generators, Some(specs.discriminator)));
    }
    let pair: GeneratorPairSpec = serde_json::from_str(&text)
        .with_context(|| format!("{} is neither a model nor a generator pair description", path.display()))?;
    let mode = match pair.guidance {
        GuidanceSpec::DomainLabel { .. } => Mode::Unpaired,
        GuidanceSpec::Skeleton { .. } => Mode::Paired,
    };
    let m = match pair.guidance {
        GuidanceSpec::DomainLabel { num_domains, .. } => num_domains,
        GuidanceSpec::Skeleton { .. } => domains,
    };
    Ok((pair, Some(default_specs(mode, m, image_size).discriminator)))
}

fn human(n: usize) -> String {
    let f = n as f64;
    if f >= 1e6 {
        format!("{:.3}M", f / 1e6)
    } else if f >= 1e3 {
        format!("{:.1}K", f / 1e3)
    } else {
        n.to_string()
    }
}

fn sharing_name(s: SharingMode) -> &'static str {
    match s {
        SharingMode::Full => "full",
        SharingMode::PartialEncoder => "partial_encoder",
        SharingMode::None => "none",
    }
}

fn inspect(
    spec: Option<&str>,
    checkpoint: Option<&Path>,
    domains: usize,
    image_size: usize,
    common: &Common,
) -> Outcome {
    let config = Config::load(common.config.as_deref())?;
    let (generators, disc, size) = match (spec, checkpoint) {
        (Some(s), None) => match preset(s, domains, image_size) {
            Some(p) => (p.generators, Some(p.discriminator), image_size),
            None => {
                let path = PathBuf::from(s);
                require_file(&path, "spec file")?;
                let (g, d) = read_spec(&path, domains, image_size)?;
                (g, d, image_size)
            }
        },
        (None, Some(path)) => {
            require_file(path, "checkpoint")?;
            let meta = read_checkpoint_meta(path)?;
            (meta.generators, meta.discriminator, meta.image_size)
        }
        (None, None) => match config.models {
            Some(m) => (m.generators, Some(m.discriminator), image_size),
            None => return Err(usage("inspect needs --spec, --checkpoint or a config with `models`")),
        },
        (Some(_), Some(_)) => return Err(usage("--spec and --checkpoint are mutually exclusive")),
    };
    let pair = build_pair(&generators, 3, size, 0)?;
    let (t, r) = (pair.translate.count_parameters(), pair.reconstruct.count_parameters());
    println!("sharing mode: {}", sharing_name(generators.sharing));
    println!("translation generator ({}): {t} ({})", generators.translate_arch, human(t));
    println!("reconstruction generator ({}): {r} ({})", generators.reconstruct_arch, human(r));
    println!("shared: {}", pair.shared_params().count());
    println!(
        "generator pair total: {} ({} + {})",
        pair.count_parameters(),
        human(t),
        human(r)
    );
    if let Some(d) = disc {
        let built = build_discriminator(&d, size, 0)?;
        let kind = match d.kind {
            DiscriminatorKind::Multidomain { .. } => "multidomain",
            DiscriminatorKind::Triplet { .. } => "triplet",
        };
        println!(
            "discriminator ({kind}, {} layers, {} scale(s)): {} ({})",
            d.n_layers,
            built.num_scales(),
            built.count_parameters(),
            human(built.count_parameters())
        );
    }
    Ok(())
}

fn gradcheck(common: &Common) -> Outcome {
    let config = Config::load(common.config.as_deref())?;
    let results = loss_suite(seed(common, &config))?;
    let mut failed = 0;
    for r in &results {
        println!(
            "{:<16} max relative error {:.3e}  {}",
            r.name,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Failure::Runtime(anyhow!("{failed} of {} gradient checks failed", results.len())));
    }
    Ok(())
}
