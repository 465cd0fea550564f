use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{validation_err, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    UnpairedMultidomain,
    PairedSkeleton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub mode: DatasetMode,
    pub domains: Vec<String>,
    pub samples: Vec<Sample>,
    pub image_size: usize,
}

impl DatasetManifest {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d == name)
    }

    pub fn with_image_size(mut self, size: usize) -> Self {
        self.image_size = size;
        self
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples
            .iter()
            .filter(move |s| s.split.unwrap_or(Split::Train) == split)
    }

    /// Ordered `(x, y)` index pairs for paired training within one split.
    ///
    /// Samples whose pairing keys share the prefix before the last `_` form a
    /// group (one subject); every ordered pair of distinct group members is
    /// returned. Singleton groups are paired with the next sample of the split.
    pub fn paired_partners(&self, split: Split) -> Vec<(usize, usize)> {
        let idx: Vec<usize> = (0..self.samples.len())
            .filter(|&i| self.samples[i].split.unwrap_or(Split::Train) == split)
            .collect();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for &i in &idx {
            let key = pairing_key(&self.samples[i].image);
            let group = key.rsplit_once('_').map(|(g, _)| g.to_string()).unwrap_or(key);
            groups.entry(group).or_default().push(i);
        }
        let mut pairs = Vec::new();
        for members in groups.values() {
            if members.len() == 1 && idx.len() > 1 {
                let pos = idx.iter().position(|&i| i == members[0]).unwrap_or(0);
                pairs.push((members[0], idx[(pos + 1) % idx.len()]));
                continue;
            }
            for &a in members {
                for &b in members {
                    if a != b {
                        pairs.push((a, b));
                    }
                }
            }
        }
        pairs
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut m: Self = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }
}

/// Stem used to match an image with its skeleton: the file stem with a
/// leading `img_` or `skeleton_` removed.
pub fn pairing_key(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    for prefix in ["img_", "skeleton_"] {
        if let Some(rest) = stem.strip_prefix(prefix) {
            return rest.to_string();
        }
    }
    stem
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .map(|e| e.eq_ignore_ascii_case("png"))
                    .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

fn first_image_size(path: &Path) -> Result<usize> {
    let (w, h) = image::image_dimensions(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    Ok(w.min(h) as usize)
}

/// Enumerates a dataset directory.
///
/// Unpaired layout: `root/<domain>/*.png`, domains sorted by name.
/// Paired layout: `root/{train,test}/{images,skeletons}/*.png`, matched by
/// [`pairing_key`]. `image_size` is taken from the first image; override it
/// with [`DatasetManifest::with_image_size`].
pub fn load_manifest(root: &Path, mode: DatasetMode) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Ingestion(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    match mode {
        DatasetMode::UnpairedMultidomain => load_unpaired(root),
        DatasetMode::PairedSkeleton => load_paired(root),
    }
}

fn load_unpaired(root: &Path) -> Result<DatasetManifest> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.len() < 2 {
        return validation_err(format!(
            "unpaired dataset needs at least 2 domain directories, found {}",
            dirs.len()
        ));
    }
    let mut domains = Vec::new();
    let mut samples = Vec::new();
    for (k, dir) in dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let files = png_files(dir)?;
        if files.is_empty() {
            return validation_err(format!("domain `{name}` has no images"));
        }
        domains.push(name);
        samples.extend(files.into_iter().map(|image| Sample {
            image,
            domain: Some(k),
            skeleton: None,
            split: None,
        }));
    }
    let image_size = first_image_size(&samples[0].image)?;
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        mode: DatasetMode::UnpairedMultidomain,
        domains,
        samples,
        image_size,
    })
}

fn load_paired(root: &Path) -> Result<DatasetManifest> {
    let mut samples = Vec::new();
    for split in [Split::Train, Split::Test] {
        let base = root.join(split.dir_name());
        if !base.is_dir() {
            if split == Split::Train {
                return Err(Error::Ingestion(format!(
                    "paired dataset is missing {}",
                    base.display()
                )));
            }
            continue;
        }
        let images = png_files(&base.join("images"))?;
        let skeletons: HashMap<String, PathBuf> = png_files(&base.join("skeletons"))?
            .into_iter()
            .map(|p| (pairing_key(&p), p))
            .collect();
        for image in images {
            let Some(skel) = skeletons.get(&pairing_key(&image)) else {
                let name = image
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                return validation_err(format!("image {name} has no matching skeleton"));
            };
            samples.push(Sample {
                image,
                domain: None,
                skeleton: Some(skel.clone()),
                split: Some(split),
            });
        }
    }
    if samples.is_empty() {
        return validation_err("paired dataset has no images");
    }
    let image_size = first_image_size(&samples[0].image)?;
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        mode: DatasetMode::PairedSkeleton,
        domains: Vec::new(),
        samples,
        image_size,
    })
}
