//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `AFNCKPT1`, a little-endian `u64` manifest
//! length, the UTF-8 JSON manifest, then every array as row-major
//! little-endian `f32` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AFNCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset from the start of the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: ModelConfig,
    pub arrays: Vec<ArrayEntry>,
}

pub fn encode_checkpoint(model: &Model<f32>) -> Result<Vec<u8>> {
    let mut arrays = Vec::with_capacity(model.params().len());
    let mut offset = 0;
    for (name, t) in model.params().iter() {
        arrays.push(ArrayEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset,
        });
        offset += 4 * t.len();
    }
    let manifest = serde_json::to_vec(&Manifest {
        version: FORMAT_VERSION,
        config: model.config().clone(),
        arrays,
    })?;
    let mut out = Vec::with_capacity(16 + manifest.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, t) in model.params().iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn truncated(what: &str) -> Error {
    Error::Checkpoint(format!("truncated file: {what} incomplete"))
}

/// Parses a checkpoint; the model is only built once every check passed.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model<f32>> {
    if bytes.len() < 8 {
        return Err(truncated("magic"));
    }
    if &bytes[..7] != &MAGIC[..7] {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    if bytes[7] != MAGIC[7] {
        return Err(Error::Checkpoint(format!(
            "unsupported format version `{}`",
            bytes[7] as char
        )));
    }
    let len_bytes: [u8; 8] = bytes.get(8..16).ok_or_else(|| truncated("header"))?.try_into().unwrap();
    let manifest_len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| Error::Checkpoint("manifest length overflows".into()))?;
    let manifest_end = 16usize.checked_add(manifest_len).ok_or_else(|| truncated("manifest"))?;
    let manifest_bytes = bytes.get(16..manifest_end).ok_or_else(|| truncated("manifest"))?;
    let manifest: Manifest = serde_json::from_slice(manifest_bytes)
        .map_err(|e| Error::Checkpoint(format!("unreadable manifest: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            manifest.version
        )));
    }
    let data = &bytes[manifest_end..];

    let mut model = Model::<f32>::new(manifest.config.clone(), 0)?;
    if manifest.arrays.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} arrays, the config needs {}",
            manifest.arrays.len(),
            model.params().len()
        )));
    }
    let mut values = Vec::with_capacity(manifest.arrays.len());
    let mut expected_offset = 0;
    for (entry, (name, t)) in manifest.arrays.iter().zip(model.params().iter()) {
        if entry.name != name || entry.shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "array `{}` {:?} does not match `{name}` {:?}",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        if entry.dtype != "f32" {
            return Err(Error::Checkpoint(format!("array `{name}` has dtype {}", entry.dtype)));
        }
        if entry.offset != expected_offset {
            return Err(Error::Checkpoint(format!("array `{name}` offset {} is out of order", entry.offset)));
        }
        let n = t.len();
        let raw = data
            .get(entry.offset..entry.offset + 4 * n)
            .ok_or_else(|| truncated(&format!("array `{name}`")))?;
        let v = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        values.push(Tensor::new(entry.shape.clone(), v)?);
        expected_offset += 4 * n;
    }
    if data.len() != expected_offset {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last array",
            data.len() - expected_offset
        )));
    }
    model.load_values(values)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model<f32>> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads and checks that the stored architecture is `expected`.
pub fn load_checkpoint_as(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Model<f32>> {
    let model = load_checkpoint(path)?;
    if model.config() != expected {
        return Err(Error::ConfigMismatch {
            expected: expected.label(),
            found: model.config().label(),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Feature;
    use crate::models::Profile;

    fn model() -> Model<f32> {
        Model::new(ModelConfig::autofraudnet(true, &Profile::desk()), 17).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let m = model();
        let back = decode_checkpoint(&encode_checkpoint(&m).unwrap()).unwrap();
        assert_eq!(back.config(), m.config());
        for ((_, a), (_, b)) in m.params().iter().zip(back.params().iter()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode_checkpoint(&model()).unwrap();
        let err = |b: &[u8]| decode_checkpoint(b).unwrap_err().to_string();
        assert!(err(&bytes[..bytes.len() - 3]).contains("truncated"));
        assert!(err(&bytes[..20]).contains("truncated"));
        assert!(err(&bytes[..4]).contains("truncated"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(err(&bad).contains("magic"));
        let mut v2 = bytes.clone();
        v2[7] = b'2';
        assert!(err(&v2).contains("version"));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(err(&extra).contains("trailing"));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let bytes = encode_checkpoint(&model()).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut manifest: Manifest = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        manifest.arrays[0].shape = vec![1, 1];
        let m = serde_json::to_vec(&manifest).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(m.len() as u64).to_le_bytes());
        out.extend_from_slice(&m);
        out.extend_from_slice(&bytes[16 + len..]);
        assert!(decode_checkpoint(&out).unwrap_err().to_string().contains("does not match"));
    }

    #[test]
    fn wrong_arch_is_config_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(), &path).unwrap();
        let other = ModelConfig::unimodal(Feature::Cds, &Profile::desk());
        assert!(matches!(load_checkpoint_as(&path, &other), Err(Error::ConfigMismatch { .. })));
        assert!(load_checkpoint_as(&path, model().config()).is_ok());
    }
}
