use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Models, ModelSpecs, PairedBatch, StepReport, SupTrainer, TrainConfig, UnsupTrainer};
use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::datamodel::{load_image_tensor, DatasetManifest, DatasetMode, DomainLabel, Split};
use crate::error::{validation_err, Error, Result};
use crate::features::{ExtractorParams, ExtractorRegistry};
use crate::generators::GuidanceSpec;

const IMAGE_CHANNELS: usize = 3;

/// Observer hooks; callbacks must not mutate the models.
pub trait TrainCallback {
    fn on_step(&mut self, _report: &StepReport) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _path: &Path, _epoch: usize) -> Result<()> {
        Ok(())
    }
}

/// Appends one JSON object per step.
pub struct JsonlLogger {
    out: BufWriter<File>,
}

impl JsonlLogger {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }
}

impl TrainCallback for JsonlLogger {
    fn on_step(&mut self, report: &StepReport) -> Result<()> {
        serde_json::to_writer(&mut self.out, report)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub reports: Vec<StepReport>,
}

/// All images of an unpaired manifest as one `(n, 3, size, size)` tensor plus domain indices.
pub fn load_unpaired_tensors(manifest: &DatasetManifest, size: usize) -> Result<(Tensor, Vec<usize>)> {
    let mut images = Vec::with_capacity(manifest.samples.len());
    let mut labels = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        let domain = s
            .domain
            .ok_or_else(|| Error::Validation(format!("{} has no domain", s.image.display())))?;
        images.push(load_image_tensor(&s.image, size, &Device::Cpu)?.into_tensor());
        labels.push(domain);
    }
    if images.is_empty() {
        return validation_err("manifest lists no samples");
    }
    Ok((Tensor::cat(&images, 0)?, labels))
}

/// Images and skeletons of one split, plus `(x, y)` partner indices into them.
pub fn load_paired_tensors(
    manifest: &DatasetManifest,
    split: Split,
    size: usize,
) -> Result<(Tensor, Tensor, Vec<(usize, usize)>)> {
    let pairs = manifest.paired_partners(split);
    let mut local = std::collections::BTreeMap::new();
    let mut images = Vec::new();
    let mut skeletons = Vec::new();
    for &(a, b) in &pairs {
        for i in [a, b] {
            if local.contains_key(&i) {
                continue;
            }
            let s = &manifest.samples[i];
            let skel = s
                .skeleton
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("{} has no skeleton", s.image.display())))?;
            local.insert(i, images.len());
            images.push(load_image_tensor(&s.image, size, &Device::Cpu)?.into_tensor());
            skeletons.push(load_image_tensor(skel, size, &Device::Cpu)?.into_tensor());
        }
    }
    if pairs.is_empty() {
        return validation_err(format!("no {} pairs in manifest", split.dir_name()));
    }
    let pairs = pairs.iter().map(|(a, b)| (local[a], local[b])).collect();
    Ok((Tensor::cat(&images, 0)?, Tensor::cat(&skeletons, 0)?, pairs))
}

fn select(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let idx: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
    Ok(t.index_select(&Tensor::new(idx.as_slice(), t.device())?, 0)?)
}

enum Task {
    Unpaired {
        trainer: Box<UnsupTrainer>,
        images: Tensor,
        labels: Vec<usize>,
    },
    Paired {
        trainer: Box<SupTrainer>,
        images: Tensor,
        skeletons: Tensor,
        pairs: Vec<(usize, usize)>,
    },
}

impl Task {
    fn len(&self) -> usize {
        match self {
            Task::Unpaired { labels, .. } => labels.len(),
            Task::Paired { pairs, .. } => pairs.len(),
        }
    }

    fn models(&self) -> &Models {
        match self {
            Task::Unpaired { trainer, .. } => trainer.models(),
            Task::Paired { trainer, .. } => trainer.models(),
        }
    }

    fn set_lr(&mut self, lr: f64) {
        match self {
            Task::Unpaired { trainer, .. } => trainer.set_learning_rate(lr),
            Task::Paired { trainer, .. } => trainer.set_learning_rate(lr),
        }
    }

    fn step(&mut self, batch: &[usize], epoch: usize) -> Result<StepReport> {
        match self {
            Task::Unpaired {
                trainer,
                images,
                labels,
            } => {
                let x = select(images, batch)?;
                let num_domains = trainer.models().disc.spec().num_domains().unwrap_or(0);
                let source = batch
                    .iter()
                    .map(|&i| DomainLabel::new(labels[i], num_domains))
                    .collect::<Result<Vec<_>>>()?;
                trainer.step(&x, &source, epoch)
            }
            Task::Paired {
                trainer,
                images,
                skeletons,
                pairs,
            } => {
                let xs: Vec<usize> = batch.iter().map(|&i| pairs[i].0).collect();
                let ys: Vec<usize> = batch.iter().map(|&i| pairs[i].1).collect();
                let b = PairedBatch {
                    x: select(images, &xs)?,
                    l_x: select(skeletons, &xs)?,
                    y: select(images, &ys)?,
                    l_y: select(skeletons, &ys)?,
                };
                trainer.step(&b, epoch)
            }
        }
    }
}

fn checkpoint_error(e: Error) -> Error {
    Error::Training {
        component: "checkpoint".into(),
        message: e.to_string(),
    }
}

/// Runs the epoch loop, logging every step to `out_dir/log.jsonl` and
/// writing checkpoints to `out_dir/checkpoints/`.
pub fn train_loop(
    manifest: &DatasetManifest,
    specs: &ModelSpecs,
    cfg: &TrainConfig,
    out_dir: &Path,
    callbacks: &mut [&mut dyn TrainCallback],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    match (manifest.mode, specs.generators.guidance) {
        (DatasetMode::UnpairedMultidomain, GuidanceSpec::DomainLabel { num_domains, .. }) => {
            if num_domains != manifest.num_domains() {
                return validation_err(format!(
                    "spec expects {num_domains} domains, dataset has {}",
                    manifest.num_domains()
                ));
            }
        }
        (DatasetMode::PairedSkeleton, GuidanceSpec::Skeleton { .. }) => {}
        (mode, _) => return validation_err(format!("dataset mode {mode:?} does not match the guidance kind")),
    }
    let size = cfg.image_size.unwrap_or(manifest.image_size);
    let models = Models::build(specs, IMAGE_CHANNELS, size, cfg.seed, cfg.dual_discriminator)?;
    let mut task = match manifest.mode {
        DatasetMode::UnpairedMultidomain => {
            let (images, labels) = load_unpaired_tensors(manifest, size)?;
            Task::Unpaired {
                trainer: Box::new(UnsupTrainer::new(models, cfg)?),
                images,
                labels,
            }
        }
        DatasetMode::PairedSkeleton => {
            let (images, skeletons, pairs) = load_paired_tensors(manifest, Split::Train, size)?;
            let extractor = ExtractorRegistry::default().create(
                &cfg.perceptual_extractor,
                &ExtractorParams {
                    seed: cfg.seed,
                    channels: IMAGE_CHANNELS,
                    image_size: (size, size),
                    dtype: images.dtype(),
                    device: Device::Cpu,
                },
            )?;
            Task::Paired {
                trainer: Box::new(SupTrainer::new(models, cfg, extractor)?),
                images,
                skeletons,
                pairs,
            }
        }
    };

    let ck_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ck_dir)?;
    let mut log = JsonlLogger::create(&out_dir.join("log.jsonl"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED);
    let mut order: Vec<usize> = (0..task.len()).collect();
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    let mut meta = CheckpointMeta {
        generators: specs.generators,
        discriminator: Some(*task.models().disc.spec()),
        image_channels: IMAGE_CHANNELS,
        image_size: size,
        domains: manifest.domains.clone(),
        epoch: 0,
        step: 0,
    };
    let budget = cfg.max_steps.unwrap_or(usize::MAX);
    let mut epoch = 0;
    while epoch < cfg.epochs && reports.len() < budget {
        task.set_lr(cfg.lr_at(epoch));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if reports.len() >= budget {
                break;
            }
            let report = task.step(batch, epoch)?;
            log.on_step(&report)?;
            for cb in callbacks.iter_mut() {
                cb.on_step(&report)?;
            }
            reports.push(report);
        }
        epoch += 1;
        if let Some(last) = reports.last() {
            log::debug!("epoch {epoch} done after {} steps: {:?}", reports.len(), last.losses);
        }
        if epoch % cfg.checkpoint_every == 0 && epoch < cfg.epochs && reports.len() < budget {
            meta.epoch = epoch;
            meta.step = reports.len();
            let path = ck_dir.join(format!("epoch_{epoch:04}.safetensors"));
            let m = task.models();
            save_checkpoint(&path, &meta, &m.pair, Some(&m.disc)).map_err(checkpoint_error)?;
            log::info!("epoch {epoch}: wrote {}", path.display());
            for cb in callbacks.iter_mut() {
                cb.on_checkpoint(&path, epoch)?;
            }
            checkpoints.push(path);
        }
    }
    meta.epoch = epoch;
    meta.step = reports.len();
    let final_checkpoint = ck_dir.join("final.safetensors");
    let m = task.models();
    save_checkpoint(&final_checkpoint, &meta, &m.pair, Some(&m.disc)).map_err(checkpoint_error)?;
    for cb in callbacks.iter_mut() {
        cb.on_checkpoint(&final_checkpoint, epoch)?;
    }
    checkpoints.push(final_checkpoint.clone());
    Ok(TrainOutcome {
        final_checkpoint,
        checkpoints,
        reports,
    })
}
