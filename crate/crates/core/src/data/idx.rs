//! MNIST IDX reader.
//!
//! Images: `u32 BE magic 0x00000803`, `u32 count`, `u32 rows`, `u32 cols`,
//! then `count·rows·cols` unsigned bytes. Labels: `u32 BE magic 0x00000801`,
//! `u32 count`, then `count` bytes. Files are read uncompressed.

use std::path::Path;

use super::{digest, DataError, Dataset, ImageShape, Split};
use crate::linalg::Matrix;
use crate::Real;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

/// A validated view of an IDX image file.
#[derive(Debug, PartialEq, Eq)]
pub struct IdxImages<'a> {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: &'a [u8],
}

fn be_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::format(file, bytes.len(), "truncated header"))
}

pub fn parse_idx_images<'a>(bytes: &'a [u8], file: &str) -> Result<IdxImages<'a>, DataError> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::format(file, 0, format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let rows = be_u32(bytes, 8, file)? as usize;
    let cols = be_u32(bytes, 12, file)? as usize;
    if rows == 0 || cols == 0 {
        return Err(DataError::format(file, 8, format!("degenerate image size {rows}x{cols}")));
    }
    let expected = count
        .checked_mul(rows * cols)
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| DataError::format(file, 4, "image count overflows"))?;
    if bytes.len() < expected {
        return Err(DataError::format(file, bytes.len(), format!("truncated: expected {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err(DataError::format(file, expected, "trailing bytes after last image"));
    }
    Ok(IdxImages { count, rows, cols, pixels: &bytes[16..] })
}

pub fn parse_idx_labels<'a>(bytes: &'a [u8], file: &str) -> Result<&'a [u8], DataError> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::format(file, 0, format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let expected = count + 8;
    if bytes.len() < expected {
        return Err(DataError::format(file, bytes.len(), format!("truncated: expected {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err(DataError::format(file, expected, "trailing bytes after last label"));
    }
    let labels = &bytes[8..];
    if let Some(pos) = labels.iter().position(|&l| l as usize >= MNIST_CLASSES) {
        return Err(DataError::format(file, 8 + pos, format!("label {} out of range", labels[pos])));
    }
    Ok(labels)
}

fn read(dir: &Path, file: &str) -> Result<Vec<u8>, DataError> {
    let path = dir.join(file);
    std::fs::read(&path).map_err(|source| DataError::Io { path, source })
}

fn load_split<T: Real>(
    dir: &Path,
    images_file: &str,
    labels_file: &str,
    split: Split,
) -> Result<Dataset<T>, DataError> {
    let image_bytes = read(dir, images_file)?;
    let label_bytes = read(dir, labels_file)?;
    let images = parse_idx_images(&image_bytes, images_file)?;
    let labels = parse_idx_labels(&label_bytes, labels_file)?;
    if images.count != labels.len() {
        return Err(DataError::format(
            labels_file,
            4,
            format!("{} labels for {} images in {images_file}", labels.len(), images.count),
        ));
    }
    let scale = 1.0 / 255.0;
    let pixels = images.pixels.iter().map(|&b| T::lit(b as f64 * scale)).collect();
    let width = images.rows * images.cols;
    let matrix = Matrix::from_raw(images.count, width, pixels);
    let labels = labels.iter().map(|&l| l as usize).collect();
    let shape = ImageShape::new(images.rows, images.cols, 1);
    Ok(Dataset::new(matrix, labels, shape, MNIST_CLASSES, split)?
        .with_provenance(vec![digest(images_file, &image_bytes), digest(labels_file, &label_bytes)]))
}

/// Reads `train-{images-idx3,labels-idx1}-ubyte` and `t10k-…` from `dir`.
///
/// Pixels are scaled by 1/255. The official test split is returned as the
/// validation set.
pub fn load_mnist<T: Real>(dir: impl AsRef<Path>) -> Result<(Dataset<T>, Dataset<T>), DataError> {
    let dir = dir.as_ref();
    let train = load_split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", Split::Train)?;
    let validation = load_split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", Split::Validation)?;
    Ok((train, validation))
}
