//! Image classification datasets: MNIST IDX and CIFAR-10 binary readers,
//! Gaussian-blob fixtures and stratified subsampling.

mod cifar;
mod idx;
mod synthetic;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::Real;

pub use cifar::{load_cifar10, parse_cifar_batch, CIFAR_RECORD_BYTES};
pub use idx::{load_mnist, parse_idx_images, parse_idx_labels, IdxImages};
pub use synthetic::synthetic_gaussian_classes;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: malformed at byte offset {offset}: {reason}")]
    Format { file: String, offset: u64, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("requested {requested} samples but only {available} are available")]
    SubsetTooLarge { requested: usize, available: usize },
}

impl DataError {
    pub(crate) fn format(file: &str, offset: usize, reason: impl Into<String>) -> Self {
        DataError::Format { file: file.to_string(), offset: offset as u64, reason: reason.into() }
    }
}

/// Height × width × channels of one image; pixels are stored in that (HWC) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    /// Flat feature vector of length `len`.
    pub const fn flat(len: usize) -> Self {
        Self { height: 1, width: len, channels: 1 }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
}

/// SHA-256 of a file a dataset was read from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

pub(crate) fn digest(file: &str, bytes: &[u8]) -> FileDigest {
    use sha2::{Digest, Sha256};
    let hash = Sha256::digest(bytes);
    let sha256 = hash.iter().map(|b| format!("{b:02x}")).collect();
    FileDigest { file: file.to_string(), sha256 }
}

/// Labelled images with pixels in `[0, 1]`; one row of `images` per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    images: Matrix<T>,
    labels: Vec<usize>,
    shape: ImageShape,
    classes: usize,
    split: Split,
    provenance: Vec<FileDigest>,
}

impl<T: Real> Dataset<T> {
    pub fn new(
        images: Matrix<T>,
        labels: Vec<usize>,
        shape: ImageShape,
        classes: usize,
        split: Split,
    ) -> Result<Self, DataError> {
        if images.rows() != labels.len() {
            return Err(DataError::Invalid(format!("{} images but {} labels", images.rows(), labels.len())));
        }
        if images.cols() != shape.len() {
            return Err(DataError::Invalid(format!(
                "rows have {} values, shape {:?} needs {}",
                images.cols(),
                shape,
                shape.len()
            )));
        }
        if classes == 0 {
            return Err(DataError::Invalid("no classes".into()));
        }
        if let Some(pos) = labels.iter().position(|&l| l >= classes) {
            return Err(DataError::Invalid(format!("label {} at sample {pos} >= {classes} classes", labels[pos])));
        }
        if let Some(pos) = images.as_slice().iter().position(|&p| p < T::zero() || p > T::one()) {
            return Err(DataError::Invalid(format!("pixel {pos} outside [0, 1]")));
        }
        Ok(Self { images, labels, shape, classes, split, provenance: Vec::new() })
    }

    pub fn with_provenance(mut self, provenance: Vec<FileDigest>) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Matrix<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &[FileDigest] {
        &self.provenance
    }

    /// Gathers the given samples into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Matrix<T>, Vec<usize>) {
        let images = self.images.select_rows(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (images, labels)
    }

    /// Samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn select(&self, indices: &[usize]) -> Self {
        let (images, labels) = self.batch(indices);
        Self {
            images,
            labels,
            shape: self.shape,
            classes: self.classes,
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }
}

/// Seeded class-stratified sample of `n` examples.
///
/// Classes are drawn round-robin from per-class shuffles, so per-class counts
/// differ by at most one except where a class runs out. The result is shuffled.
pub fn subset<T: Real>(dataset: &Dataset<T>, n: usize, seed: u64) -> Result<Dataset<T>, DataError> {
    if n > dataset.len() {
        return Err(DataError::SubsetTooLarge { requested: n, available: dataset.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for group in &mut by_class {
        group.shuffle(&mut rng);
    }
    let mut cursors = vec![0usize; dataset.classes];
    let mut picked = Vec::with_capacity(n);
    while picked.len() < n {
        for (class, group) in by_class.iter().enumerate() {
            if picked.len() == n {
                break;
            }
            if let Some(&idx) = group.get(cursors[class]) {
                picked.push(idx);
                cursors[class] += 1;
            }
        }
    }
    picked.shuffle(&mut rng);
    Ok(dataset.select(&picked))
}
