//! Dataset ingestion, normalization, and artifact files.

mod cifar;
mod grid;
mod idx;
mod svhn;
mod synfile;

pub use cifar::{load_cifar10, load_cifar100};
pub use grid::export_grid;
pub use idx::{load_idx_images, load_idx_labels, write_idx_images, write_idx_labels};
pub use svhn::load_svhn;
pub use synfile::{read_synthetic_set, write_synthetic_set};

use crate::batch::ImageBatch;
use crate::seeds::{self, tag};
use rand::seq::SliceRandom;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable naming the default dataset root directory.
pub const DATA_ROOT_ENV: &str = "CONDENSE_DATA_ROOT";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: bad magic {found:#010x} at offset {offset}, expected {expected:#010x}")]
    BadMagic {
        file: PathBuf,
        offset: usize,
        found: u32,
        expected: u32,
    },
    #[error("{file}: truncated at offset {offset}, needed {needed} more bytes")]
    Truncated {
        file: PathBuf,
        offset: usize,
        needed: usize,
    },
    #[error("{file}: {detail}")]
    Malformed { file: PathBuf, detail: String },
    #[error("image/label count mismatch: {images} images in {images_file} but {labels} labels in {labels_file}")]
    CountMismatch {
        images_file: PathBuf,
        labels_file: PathBuf,
        images: usize,
        labels: usize,
    },
    #[error("{file}: unsupported format version {found}, this build reads version {expected}")]
    Version {
        file: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{file}: checksum mismatch, stored {stored:#010x} but computed {computed:#010x}")]
    Checksum {
        file: PathBuf,
        stored: u32,
        computed: u32,
    },
    #[error("unknown dataset '{0}', expected mnist, fashion, cifar10, cifar100, or svhn")]
    UnknownDataset(String),
    #[error("class {class} has {available} images, {requested} requested")]
    NotEnoughImages {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn io_err(file: &Path, source: std::io::Error) -> DataError {
    DataError::Io { file: file.to_path_buf(), source }
}

/// Raw decoded images: one byte per pixel, `(N, C, H, W)` layout.
#[derive(Clone, Debug)]
pub struct RawImages {
    pub data: Vec<u8>,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl RawImages {
    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Per-channel normalization computed on a training split.
///
/// Pixels are first scaled to `[0, 1]`, then shifted and scaled per channel:
/// `x = (raw / 255 - mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// Computes per-channel statistics of `raw / 255` over all images.
    pub fn fit(raw: &RawImages) -> Self {
        let plane = raw.h * raw.w;
        let count = (raw.n * plane) as f64;
        let mut mean = vec![0.0f64; raw.c];
        let mut sq = vec![0.0f64; raw.c];
        for img in raw.data.chunks_exact(raw.image_len()) {
            for (ch, px) in img.chunks_exact(plane).enumerate() {
                for &b in px {
                    let v = b as f64 / 255.0;
                    mean[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let mut std = vec![0.0f32; raw.c];
        let mut m32 = vec![0.0f32; raw.c];
        for ch in 0..raw.c {
            let m = mean[ch] / count;
            let var = (sq[ch] / count - m * m).max(0.0);
            m32[ch] = m as f32;
            std[ch] = (var.sqrt() as f32).max(1e-6);
        }
        Self { mean: m32, std }
    }

    /// Applies the transform, producing normalized `f32` pixels.
    pub fn apply(&self, raw: &RawImages) -> Vec<f32> {
        let plane = raw.h * raw.w;
        let mut out = Vec::with_capacity(raw.data.len());
        for img in raw.data.chunks_exact(raw.image_len()) {
            for (ch, px) in img.chunks_exact(plane).enumerate() {
                let m = self.mean[ch];
                let s = self.std[ch];
                out.extend(px.iter().map(|&b| (b as f32 / 255.0 - m) / s));
            }
        }
        out
    }

    /// Inverts the transform back to the `[0, 255]` scale without clamping.
    pub fn denormalize(&self, images: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
        let plane = h * w;
        let mut out = Vec::with_capacity(images.len());
        for img in images.chunks_exact(c * plane) {
            for (ch, px) in img.chunks_exact(plane).enumerate() {
                let m = self.mean[ch];
                let s = self.std[ch];
                out.extend(px.iter().map(|&v| (v * s + m) * 255.0));
            }
        }
        out
    }
}

/// A normalized dataset: train and test splits plus the statistics that
/// produced them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub classes: usize,
    pub train: ImageBatch<f32>,
    pub test: ImageBatch<f32>,
    pub norm: Normalization,
}

impl Dataset {
    /// Normalizes raw splits with statistics fit on the training split.
    pub fn from_raw(
        name: &str,
        classes: usize,
        train: RawImages,
        train_labels: Vec<usize>,
        test: RawImages,
        test_labels: Vec<usize>,
    ) -> Self {
        let norm = Normalization::fit(&train);
        let train_batch =
            ImageBatch::from_vec(norm.apply(&train), train.n, train.c, train.h, train.w, train_labels);
        let test_batch =
            ImageBatch::from_vec(norm.apply(&test), test.n, test.c, test.h, test.w, test_labels);
        Self {
            name: name.to_string(),
            classes,
            train: train_batch,
            test: test_batch,
            norm,
        }
    }

    /// True for datasets whose classes are orientation-sensitive glyphs, for
    /// which horizontal flip is excluded from combined augmentation.
    pub fn is_digit_like(&self) -> bool {
        matches!(self.name.as_str(), "mnist" | "svhn" | "usps")
    }

    /// Draws a stratified subset of both splits, preserving normalization.
    /// A count of 0 keeps that split whole.
    ///
    /// Sampling is without replacement per class; errors if any class has
    /// fewer images than requested.
    pub fn subsample(&self, train_per_class: usize, test_per_class: usize, seed: u64) -> Result<Self, DataError> {
        let train = if train_per_class == 0 {
            self.train.clone()
        } else {
            stratified(&self.train, self.classes, train_per_class, seed, 0)?
        };
        let test = if test_per_class == 0 {
            self.test.clone()
        } else {
            stratified(&self.test, self.classes, test_per_class, seed, 1)?
        };
        Ok(Self {
            name: self.name.clone(),
            classes: self.classes,
            train,
            test,
            norm: self.norm.clone(),
        })
    }
}

fn stratified(
    batch: &ImageBatch<f32>,
    classes: usize,
    per_class: usize,
    seed: u64,
    split: u64,
) -> Result<ImageBatch<f32>, DataError> {
    let mut picked = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let mut idx = batch.indices_of_class(class);
        if idx.len() < per_class {
            return Err(DataError::NotEnoughImages {
                class,
                available: idx.len(),
                requested: per_class,
            });
        }
        let mut rng = seeds::derive(seed, &[tag::CORESET, split, class as u64]);
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        idx.sort_unstable();
        picked.extend(idx);
    }
    Ok(batch.select(&picked))
}

/// Loads a dataset by name from a root directory laid out as
/// `<root>/<name>/...` with the files each loader documents.
pub fn load_dataset(name: &str, root: &Path) -> Result<Dataset, DataError> {
    let dir = root.join(name);
    match name {
        "mnist" | "fashion" => {
            let (train, train_l) = load_idx_pair(&dir, "train")?;
            let (test, test_l) = load_idx_pair(&dir, "t10k")?;
            Ok(Dataset::from_raw(name, 10, train, train_l, test, test_l))
        }
        "cifar10" => load_cifar10(&dir),
        "cifar100" => load_cifar100(&dir),
        "svhn" => load_svhn(&dir),
        other => Err(DataError::UnknownDataset(other.to_string())),
    }
}

fn load_idx_pair(dir: &Path, stem: &str) -> Result<(RawImages, Vec<usize>), DataError> {
    let images_path = dir.join(format!("{stem}-images-idx3-ubyte"));
    let labels_path = dir.join(format!("{stem}-labels-idx1-ubyte"));
    let images = load_idx_images(&images_path)?;
    let labels = load_idx_labels(&labels_path)?;
    if images.n != labels.len() {
        return Err(DataError::CountMismatch {
            images_file: images_path,
            labels_file: labels_path,
            images: images.n,
            labels: labels.len(),
        });
    }
    Ok((images, labels))
}

/// Resolves the dataset root: explicit argument, else the environment
/// variable, else `data` under the working directory.
pub fn resolve_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Ok(v) = std::env::var(DATA_ROOT_ENV) {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    PathBuf::from("data")
}
