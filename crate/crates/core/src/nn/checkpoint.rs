//! Binary model checkpoints.
//!
//! All integers are little-endian `u32`, all parameters little-endian `f64`.
//!
//! ```text
//! magic          b"SPFG"
//! version        u32 = 1
//! input shape    u32 height, u32 width, u32 channels
//! layer count    u32
//! per layer      u8 kind (0 dense, 1 conv2d), u8 activation (0 identity, 1 tanh)
//!                dense:  u32 inputs, u32 outputs
//!                conv2d: u32 in_height, u32 in_width, u32 in_channels, u32 kernel, u32 filters
//! per layer      weights then biases, in the in-memory order of `Layer`
//! ```
//!
//! Trailing bytes are an error.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::model::{Activation, Layer, LayerKind, ModelParams};
use super::NnError;
use crate::data::ImageShape;
use crate::Real;

pub const MAGIC: &[u8; 4] = b"SPFG";
pub const VERSION: u32 = 1;

/// Guards allocation when reading a corrupted header.
const MAX_PARAMS: usize = 1 << 31;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("checkpoint describes an invalid model: {0}")]
    Model(#[from] NnError),
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode<T: Real>(params: &ModelParams<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let s = params.input_shape();
    for v in [s.height, s.width, s.channels, params.layers().len()] {
        put_u32(&mut out, v);
    }
    for layer in params.layers() {
        let act = match layer.activation {
            Activation::Identity => 0u8,
            Activation::Tanh => 1,
        };
        match layer.kind {
            LayerKind::Dense { inputs, outputs } => {
                out.extend_from_slice(&[0, act]);
                put_u32(&mut out, inputs);
                put_u32(&mut out, outputs);
            }
            LayerKind::Conv2d { input, kernel, filters } => {
                out.extend_from_slice(&[1, act]);
                for v in [input.height, input.width, input.channels, kernel, filters] {
                    put_u32(&mut out, v);
                }
            }
        }
    }
    for tensor in params.tensors() {
        for v in tensor {
            out.extend_from_slice(&v.to_f64_lossless().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Malformed {
                offset: self.bytes.len(),
                reason: format!("truncated in {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn malformed(&self, at: usize, reason: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed { offset: at, reason: reason.into() }
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<ModelParams<T>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut c = Cursor { bytes, pos: 4 };
    let version = c.u32("version")? as u32;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let input = ImageShape::new(c.u32("input shape")?, c.u32("input shape")?, c.u32("input shape")?);
    let count_at = c.pos;
    let count = c.u32("layer count")?;
    if count == 0 {
        return Err(c.malformed(count_at, "no layers"));
    }
    let mut kinds = Vec::new();
    let mut total = 0usize;
    for i in 0..count {
        let at = c.pos;
        let kind = c.u8("layer descriptor")?;
        let activation = match c.u8("layer descriptor")? {
            0 => Activation::Identity,
            1 => Activation::Tanh,
            other => return Err(c.malformed(at + 1, format!("layer {i}: unknown activation {other}"))),
        };
        let kind = match kind {
            0 => LayerKind::Dense { inputs: c.u32("layer descriptor")?, outputs: c.u32("layer descriptor")? },
            1 => {
                let shape =
                    ImageShape::new(c.u32("layer descriptor")?, c.u32("layer descriptor")?, c.u32("layer descriptor")?);
                LayerKind::Conv2d {
                    input: shape,
                    kernel: c.u32("layer descriptor")?,
                    filters: c.u32("layer descriptor")?,
                }
            }
            other => return Err(c.malformed(at, format!("layer {i}: unknown kind {other}"))),
        };
        if let LayerKind::Conv2d { input, kernel, .. } = kind {
            if kernel == 0 || kernel > input.height || kernel > input.width {
                return Err(c.malformed(at, format!("layer {i}: kernel does not fit its input")));
            }
        }
        total = total
            .checked_add(kind.weight_len())
            .and_then(|t| t.checked_add(kind.bias_len()))
            .filter(|&t| t <= MAX_PARAMS)
            .ok_or_else(|| c.malformed(at, "parameter count overflows"))?;
        kinds.push((kind, activation));
    }
    if bytes.len() - c.pos != total * 8 {
        return Err(c.malformed(
            bytes.len().min(c.pos + total * 8),
            format!("expected {} parameter bytes, found {}", total * 8, bytes.len() - c.pos),
        ));
    }
    let mut read = |n: usize| -> Result<Vec<T>, CheckpointError> {
        let raw = c.take(n * 8, "parameters")?;
        Ok(raw.chunks_exact(8).map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("8 bytes")))).collect())
    };
    let mut layers = Vec::with_capacity(count);
    for (kind, activation) in kinds {
        let weights = read(kind.weight_len())?;
        let biases = read(kind.bias_len())?;
        layers.push(Layer { kind, activation, weights, biases });
    }
    Ok(ModelParams::from_layers(input, layers)?)
}

pub fn write_checkpoint<T: Real, W: Write>(params: &ModelParams<T>, mut out: W) -> io::Result<()> {
    out.write_all(&encode(params))
}

pub fn read_checkpoint<T: Real, R: Read>(mut input: R) -> Result<ModelParams<T>, CheckpointError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|source| CheckpointError::Io { path: "<reader>".into(), source })?;
    decode(&bytes)
}

pub fn save<T: Real>(params: &ModelParams<T>, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(params)).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load<T: Real>(path: &Path) -> Result<ModelParams<T>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelParams<f64> {
        ModelParams::cnn(ImageShape::new(6, 6, 2), &[3], 3, 4, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = model();
        assert_eq!(decode::<f64>(&encode(&p)).unwrap(), p);
        let m = ModelParams::<f64>::mlp(ImageShape::flat(5), &[4, 3], 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.spfg");
        save(&m, &path).unwrap();
        assert_eq!(load::<f64>(&path).unwrap(), m);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&model());
        assert_eq!(&bytes[..4], b"SPFG");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        assert_eq!(bytes[24], 1);
        assert_eq!(bytes[25], 1);
    }

    #[test]
    fn corruption_is_reported() {
        let good = encode(&model());
        assert!(matches!(decode::<f64>(b"NOPE"), Err(CheckpointError::BadMagic)));
        let mut v = good.clone();
        v[4] = 9;
        assert!(matches!(decode::<f64>(&v), Err(CheckpointError::UnsupportedVersion(9))));
        assert!(matches!(decode::<f64>(&good[..good.len() - 3]), Err(CheckpointError::Malformed { .. })));
        let mut v = good.clone();
        v.push(0);
        assert!(matches!(decode::<f64>(&v), Err(CheckpointError::Malformed { .. })));
        let mut v = good.clone();
        v[25] = 7;
        assert!(matches!(decode::<f64>(&v), Err(CheckpointError::Malformed { offset: 25, .. })));
        let mut v = good.clone();
        let nan_at = v.len() - 8;
        v[nan_at..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode::<f64>(&v), Err(CheckpointError::Model(NnError::NonFinite(_)))));
    }
}
