//! Dataset splits, image loading and batching, plus the synthetic ECG
//! generator used for data-free runs.

pub mod synth;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use synth::{synth_ecg, SynthSubjectParams, Wave};

use crate::ekm::{DatasetManifest, EkmImage, ManifestEntry, Split};

pub const DEFAULT_BATCH_SIZE: usize = 32;
/// Decoded images are cached when they fit under this many bytes.
pub const DEFAULT_CACHE_BUDGET: usize = 1 << 30;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("subject {subject} has {train} training and {test} test EKMs; need at least 2 and 1")]
    SubjectTooSmall { subject: String, train: usize, test: usize },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("label {0:?} is not in the vocabulary")]
    LabelUnknown(String),
    #[error("image {path} is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    ImageSize {
        path: PathBuf,
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error("invalid split configuration: {0}")]
    InvalidSplit(String),
    #[error("invalid synthetic parameters: {0}")]
    InvalidSynthParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Fraction of each subject's training pool held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            validation_fraction: 0.1,
            seed: 42,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, f) in [("train", self.train_fraction), ("validation", self.validation_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(DatasetError::InvalidSplit(format!("{name} fraction must lie in (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<ManifestEntry>,
    pub validation: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

/// Carve a seeded, per-subject validation sample out of each subject's
/// training EKMs. Test membership comes from the manifest (the chronological
/// tail written at generation time). Lists keep manifest order.
pub fn split_dataset(manifest: &DatasetManifest, cfg: &SplitConfig) -> Result<DatasetSplits, DatasetError> {
    cfg.validate()?;
    if manifest.entries.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut role = vec![Split::Test; manifest.entries.len()];
    for subject in manifest.subjects() {
        let pool: Vec<usize> = (0..manifest.entries.len())
            .filter(|&i| manifest.entries[i].subject_id == subject && manifest.entries[i].split != Split::Test)
            .collect();
        let test = manifest
            .entries
            .iter()
            .filter(|e| e.subject_id == subject && e.split == Split::Test)
            .count();
        if pool.len() < 2 || test < 1 {
            return Err(DatasetError::SubjectTooSmall {
                subject,
                train: pool.len(),
                test,
            });
        }
        let n_val = ((pool.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, pool.len() - 1);
        let mut shuffled = pool.clone();
        shuffled.shuffle(&mut rng);
        for &i in &pool {
            role[i] = Split::Train;
        }
        for &i in &shuffled[..n_val] {
            role[i] = Split::Validation;
        }
    }
    let pick = |s: Split| -> Vec<ManifestEntry> {
        manifest
            .entries
            .iter()
            .zip(&role)
            .filter(|(_, r)| **r == s)
            .map(|(e, _)| e.clone())
            .collect()
    };
    Ok(DatasetSplits {
        train: pick(Split::Train),
        validation: pick(Split::Validation),
        test: pick(Split::Test),
    })
}

/// Subject id to class index, frozen in manifest order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    names: Vec<String>,
}

impl LabelVocab {
    pub fn new(names: Vec<String>) -> Self {
        Self { names }
    }

    pub fn from_manifest(manifest: &DatasetManifest) -> Self {
        Self::new(manifest.subjects())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize, DatasetError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| DatasetError::LabelUnknown(name.to_string()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone)]
enum Pixels {
    Cached(Vec<u8>),
    OnDisk(PathBuf),
}

/// Labeled images for one split.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    items: Vec<(Pixels, usize)>,
}

fn read_image(path: &Path, height: usize, width: usize) -> Result<Vec<u8>, DatasetError> {
    let img = EkmImage::read_png(path, "").map_err(|e| DatasetError::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if img.height != height || img.width != width {
        return Err(DatasetError::ImageSize {
            path: path.to_path_buf(),
            got_h: img.height,
            got_w: img.width,
            want_h: height,
            want_w: width,
        });
    }
    Ok(img.pixels)
}

impl SampleSet {
    /// Images referenced by manifest entries. They are decoded up front when
    /// the split fits in `cache_budget` bytes, otherwise on every batch.
    pub fn from_entries(
        manifest: &DatasetManifest,
        entries: &[ManifestEntry],
        vocab: &LabelVocab,
        height: usize,
        width: usize,
        cache_budget: usize,
    ) -> Result<Self, DatasetError> {
        let cache = entries.len() * height * width * 3 <= cache_budget;
        let items = entries
            .iter()
            .map(|e| {
                let label = vocab.index_of(&e.subject_id)?;
                let path = manifest.image_path(e);
                let px = if cache {
                    Pixels::Cached(read_image(&path, height, width)?)
                } else {
                    Pixels::OnDisk(path)
                };
                Ok((px, label))
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        Ok(Self {
            height,
            width,
            classes: vocab.len(),
            items,
        })
    }

    pub fn from_images(images: &[EkmImage], vocab: &LabelVocab) -> Result<Self, DatasetError> {
        let (height, width) = images.first().map_or((0, 0), |i| (i.height, i.width));
        let items = images
            .iter()
            .map(|img| Ok((Pixels::Cached(img.pixels.clone()), vocab.index_of(&img.label)?)))
            .collect::<Result<Vec<_>, DatasetError>>()?;
        Ok(Self {
            height,
            width,
            classes: vocab.len(),
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|(_, l)| *l).collect()
    }

    fn pixels(&self, i: usize) -> Result<std::borrow::Cow<'_, [u8]>, DatasetError> {
        match &self.items[i].0 {
            Pixels::Cached(p) => Ok(std::borrow::Cow::Borrowed(p)),
            Pixels::OnDisk(path) => Ok(std::borrow::Cow::Owned(read_image(path, self.height, self.width)?)),
        }
    }

    /// Assemble a batch from the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch, DatasetError> {
        let px = self.height * self.width * 3;
        let mut images = Vec::with_capacity(indices.len() * px);
        let mut labels = vec![0.0f32; indices.len() * self.classes];
        let mut targets = Vec::with_capacity(indices.len());
        for (b, &i) in indices.iter().enumerate() {
            images.extend(self.pixels(i)?.iter().map(|&v| f32::from(v) / 255.0));
            let label = self.items[i].1;
            labels[b * self.classes + label] = 1.0;
            targets.push(label);
        }
        Ok(Batch {
            size: indices.len(),
            height: self.height,
            width: self.width,
            classes: self.classes,
            images,
            labels,
            targets,
        })
    }
}

/// Images scaled to [0, 1] in `B x H x W x 3` order with one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub images: Vec<f32>,
    pub labels: Vec<f32>,
    pub targets: Vec<usize>,
}

/// Sample order for one epoch, fully determined by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Shuffled batches for one epoch; the last batch may be short.
pub fn load_batches(
    set: &SampleSet,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Result<Batch, DatasetError>> + '_, DatasetError> {
    if batch_size == 0 {
        return Err(DatasetError::InvalidSplit("batch size must be at least 1".into()));
    }
    let order = epoch_order(set.len(), seed, epoch);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |c| set.batch(&c)))
}

/// Batches in stored order, for evaluation.
pub fn sequential_batches(set: &SampleSet, batch_size: usize) -> impl Iterator<Item = Result<Batch, DatasetError>> + '_ {
    let idx: Vec<usize> = (0..set.len()).collect();
    let chunks: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |c| set.batch(&c))
}
