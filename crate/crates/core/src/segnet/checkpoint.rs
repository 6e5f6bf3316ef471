//! Versioned binary checkpoints.
//!
//! Layout: the magic bytes `MDNCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! parameter as little-endian `f32` values in header order.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{SegModelConfig, SegNet};
use super::train::{EpochRecord, TrainConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MDNCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    model_config: SegModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    weights: Vec<ParamShape>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SegNet<f32>,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn new(model: SegNet<f32>, train_config: TrainConfig, history: Vec<EpochRecord>) -> Self {
        Self {
            epoch: history.len(),
            model,
            train_config,
            history,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.params();
        let header = Header {
            format_version: FORMAT_VERSION,
            model_config: self.model.config().clone(),
            train_config: self.train_config.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            weights: params
                .entries()
                .iter()
                .map(|e| ParamShape {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 4 * params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in params.entries() {
            for v in &e.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// `path` is used only in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let eof = |e: std::io::Error| Error::io(path, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(Error::format(path, "not a checkpoint file"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(eof)?;
        let found = u32::from_le_bytes(u32buf);
        if found != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found,
            });
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(eof)?;
        let len = u64::from_le_bytes(u64buf);
        let remaining = (bytes.len() as u64).saturating_sub(r.position());
        if len > remaining {
            return Err(eof(std::io::ErrorKind::UnexpectedEof.into()));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json).map_err(eof)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| Error::format(path, e))?;
        if header.format_version != found {
            return Err(Error::format(path, "header and preamble disagree on the format version"));
        }
        let mut model = SegNet::<f32>::new(header.model_config.clone(), 0).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::ConfigMismatch(m),
            other => other,
        })?;
        let entries = model.params_mut().entries_mut();
        if entries.len() != header.weights.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint lists {} parameter blocks, the configured model has {}",
                header.weights.len(),
                entries.len()
            )));
        }
        for (entry, stored) in entries.iter_mut().zip(&header.weights) {
            if entry.name != stored.name || entry.shape != stored.shape {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    stored.name, stored.shape, entry.name, entry.shape
                )));
            }
            for v in entry.value.iter_mut() {
                r.read_exact(&mut u32buf).map_err(eof)?;
                *v = f32::from_le_bytes(u32buf);
            }
        }
        if r.position() != bytes.len() as u64 {
            return Err(Error::format(path, "trailing bytes after the last parameter block"));
        }
        Ok(Self {
            model,
            train_config: header.train_config,
            epoch: header.epoch,
            history: header.history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks the stored architecture against `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &SegModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.model.config() != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds {:?}, expected {:?}",
                ckpt.model.config(),
                expected
            )));
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(
    model: &SegNet<f32>,
    train_config: &TrainConfig,
    history: &[EpochRecord],
    path: impl AsRef<Path>,
) -> Result<()> {
    Checkpoint::new(model.clone(), train_config.clone(), history.to_vec()).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SegNet<f32>> {
    Ok(Checkpoint::load(path)?.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::tensor::Tensor;

    fn model(depth: usize) -> SegNet<f32> {
        let cfg = SegModelConfig {
            depth,
            base_channels: 2,
            input_size: 32,
            ..Default::default()
        };
        SegNet::new(cfg, 11).unwrap()
    }

    fn history() -> Vec<EpochRecord> {
        // Values whose shortest decimal form needs all 17 digits.
        vec![
            EpochRecord {
                epoch: 1,
                train_loss: 0.8214856592196874,
                val_iou: Some(0.1 + 0.2),
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.014279338910768945,
                val_iou: None,
            },
        ]
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model(2);
        save_checkpoint(&m, &TrainConfig::default(), &history(), &path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model.params(), m.params());
        assert_eq!(back.history, history());
        assert_eq!(back.epoch, 2);
        let x = Tensor::from_vec(3, 32, 32, (0..3 * 32 * 32).map(|i| (i % 7) as f32 / 7.0).collect());
        let a = m.forward(std::slice::from_ref(&x)).unwrap();
        let b = back.model.forward(&[x]).unwrap();
        assert!(a[0].data.iter().zip(&b[0].data).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(Checkpoint::load(&path).unwrap().to_bytes(), fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_file_is_io_failure() {
        let bytes = Checkpoint::new(model(2), TrainConfig::default(), vec![]).to_bytes();
        for cut in [4, 15, 40, bytes.len() - 1] {
            let r = Checkpoint::from_bytes(&bytes[..cut], Path::new("t"));
            assert!(matches!(r, Err(Error::Io { .. })), "cut {cut}");
        }
    }

    #[test]
    fn other_version_is_refused() {
        let mut bytes = Checkpoint::new(model(2), TrainConfig::default(), vec![]).to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, Path::new("v")),
            Err(Error::VersionMismatch { expected: 1, found: 7 })
        ));
    }

    #[test]
    fn deeper_model_mismatches_expectation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.ckpt");
        Checkpoint::new(model(3), TrainConfig::default(), vec![]).save(&path).unwrap();
        let want = model(2).config().clone();
        assert!(matches!(Checkpoint::load_expecting(&path, &want), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(
            Checkpoint::from_bytes(b"NOTACKPT-and-more-bytes", Path::new("g")),
            Err(Error::Format { .. })
        ));
    }
}
