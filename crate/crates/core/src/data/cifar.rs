//! CIFAR-10 binary version: records of 1 label byte followed by 3072 pixel
//! bytes (1024 red, 1024 green, 1024 blue; each plane row-major 32×32).
//! Pixels are re-ordered to height × width × channel.

use std::path::Path;

use super::{digest, DataError, Dataset, FileDigest, ImageShape, Split};
use crate::linalg::Matrix;
use crate::Real;

pub const CIFAR_RECORD_BYTES: usize = 3073;
const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const CLASSES: usize = 10;
const TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
const TEST_FILE: &str = "test_batch.bin";

/// Decodes one batch file into HWC pixels (still bytes) and labels.
pub fn parse_cifar_batch(bytes: &[u8], file: &str) -> Result<(Vec<u8>, Vec<usize>), DataError> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD_BYTES;
        return Err(DataError::format(
            file,
            offset,
            format!("size {} is not a positive multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
        ));
    }
    let records = bytes.len() / CIFAR_RECORD_BYTES;
    let mut pixels = vec![0u8; records * 3 * PLANE];
    let mut labels = Vec::with_capacity(records);
    for (r, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= CLASSES {
            return Err(DataError::format(file, r * CIFAR_RECORD_BYTES, format!("label {label} out of range")));
        }
        labels.push(label);
        let out = &mut pixels[r * 3 * PLANE..(r + 1) * 3 * PLANE];
        for c in 0..3 {
            let plane = &record[1 + c * PLANE..1 + (c + 1) * PLANE];
            for (pos, &v) in plane.iter().enumerate() {
                out[pos * 3 + c] = v;
            }
        }
    }
    Ok((pixels, labels))
}

fn load_files<T: Real>(dir: &Path, files: &[&str], split: Split) -> Result<Dataset<T>, DataError> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut provenance: Vec<FileDigest> = Vec::new();
    for &file in files {
        let path = dir.join(file);
        let bytes = std::fs::read(&path).map_err(|source| DataError::Io { path, source })?;
        let (p, l) = parse_cifar_batch(&bytes, file)?;
        pixels.extend(p);
        labels.extend(l);
        provenance.push(digest(file, &bytes));
    }
    let shape = ImageShape::new(SIDE, SIDE, 3);
    let values = pixels.iter().map(|&b| T::lit(b as f64 / 255.0)).collect();
    let images = Matrix::from_raw(labels.len(), shape.len(), values);
    Ok(Dataset::new(images, labels, shape, CLASSES, split)?.with_provenance(provenance))
}

/// Reads the five training batches and the test batch from `dir`.
pub fn load_cifar10<T: Real>(dir: impl AsRef<Path>) -> Result<(Dataset<T>, Dataset<T>), DataError> {
    let dir = dir.as_ref();
    let train = load_files(dir, &TRAIN_FILES, Split::Train)?;
    let validation = load_files(dir, &[TEST_FILE], Split::Validation)?;
    Ok((train, validation))
}
