//! Checkpoint directories: `manifest.json`, `params.bin` (little-endian
//! f32, tensors in manifest order) and optional `optim.bin` (Adam moments).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::Model;
use super::params::TensorSpec;
use super::train::Adam;
use crate::codec::CodecConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
    pub model: ModelConfig,
    pub codec: CodecConfig,
    pub step: usize,
    pub seed: u64,
    pub has_optimizer: bool,
}

/// Everything in the manifest besides the tensor table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub codec: CodecConfig,
    pub step: usize,
    pub seed: u64,
}

pub struct Checkpoint {
    pub model: Model<f32>,
    pub adam: Option<Adam>,
    pub meta: CheckpointMeta,
}

impl CheckpointManifest {
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        self.tensors
            .iter()
            .map(|t| TensorSpec {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset: t.byte_offset / 4,
            })
            .collect()
    }
}

fn write_f32s(path: &Path, parts: &[&[f32]]) -> Result<()> {
    let mut bytes = Vec::with_capacity(parts.iter().map(|p| p.len() * 4).sum());
    for p in parts {
        for v in *p {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32s(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::file(
            path,
            format!("has {} bytes, expected {}", bytes.len(), expected * 4),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn save(
    dir: &Path,
    model: &Model<f32>,
    adam: Option<&Adam>,
    meta: &CheckpointMeta,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        tensors: model
            .layout
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                byte_offset: t.offset * 4,
            })
            .collect(),
        model: meta.model.clone(),
        codec: meta.codec,
        step: meta.step,
        seed: meta.seed,
        has_optimizer: adam.is_some(),
    };
    write_f32s(&dir.join("params.bin"), &[&model.params])?;
    if let Some(a) = adam {
        write_f32s(&dir.join("optim.bin"), &[&a.m, &a.v])?;
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::file(&path, e.to_string()))?;
    if m.format_version != CHECKPOINT_VERSION {
        return Err(Error::file(
            &path,
            format!("unsupported format_version {}", m.format_version),
        ));
    }
    Ok(m)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let mut model = Model::<f32>::zeros(manifest.model.clone())?;
    model.layout.check_compatible(&manifest.tensor_specs())?;
    model.params = read_f32s(&dir.join("params.bin"), model.num_params())?;
    if let Some(i) = model.params.iter().position(|v| !v.is_finite()) {
        return Err(Error::file(
            dir.join("params.bin"),
            format!("non-finite parameter at index {i}"),
        ));
    }
    let adam = if manifest.has_optimizer {
        let n = model.num_params();
        let mut mv = read_f32s(&dir.join("optim.bin"), 2 * n)?;
        let v = mv.split_off(n);
        let mut a = Adam::new(n);
        a.m = mv;
        a.v = v;
        Some(a)
    } else {
        None
    };
    Ok(Checkpoint {
        model,
        adam,
        meta: CheckpointMeta {
            model: manifest.model,
            codec: manifest.codec,
            step: manifest.step,
            seed: manifest.seed,
        },
    })
}

/// Loads a checkpoint that must match `expected`; a mismatch lists every
/// offending tensor shape.
pub fn load_compatible(dir: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let want = Model::<f32>::zeros(expected.clone())?;
    want.layout.check_compatible(&manifest.tensor_specs())?;
    if manifest.model.arch.variant != expected.arch.variant {
        return Err(Error::Config(format!(
            "checkpoint variant {} differs from configured {}",
            manifest.model.arch.variant.name(),
            expected.arch.variant.name()
        )));
    }
    load(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{ArchConfig, Geometry, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(depth: usize) -> ModelConfig {
        ModelConfig {
            arch: ArchConfig {
                embed_dim: 8,
                heads: 2,
                depth,
                variant: Variant::Full,
                ..ArchConfig::default()
            },
            geometry: Geometry {
                channels: 4,
                frames: 2,
                height: 2,
                width: 2,
                vocab: 3,
            },
        }
    }

    #[test]
    fn round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let model =
            Model::<f32>::init_dense(cfg(1), 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut adam = Adam::new(model.num_params());
        adam.m[3] = 0.25;
        adam.v[5] = 2.0;
        let meta = CheckpointMeta {
            model: cfg(1),
            codec: CodecConfig::default(),
            step: 7,
            seed: 11,
        };
        save(dir.path(), &model, Some(&adam), &meta).unwrap();
        let ck = load(dir.path()).unwrap();
        assert_eq!(ck.model.params, model.params);
        assert_eq!(ck.adam.unwrap(), adam);
        assert_eq!(ck.meta, meta);

        let mut other = cfg(1);
        other.arch.embed_dim = 12;
        other.arch.heads = 3;
        let err = load_compatible(dir.path(), &other)
            .err()
            .unwrap()
            .to_string();
        assert!(err.contains("embed.w"), "{err}");
    }

    #[test]
    fn truncated_params_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::<f32>::zeros(cfg(1)).unwrap();
        let meta = CheckpointMeta {
            model: cfg(1),
            codec: CodecConfig::default(),
            step: 0,
            seed: 0,
        };
        save(dir.path(), &model, None, &meta).unwrap();
        fs::write(dir.path().join("params.bin"), [0u8; 8]).unwrap();
        let err = load(dir.path()).err().unwrap().to_string();
        assert!(err.contains("params.bin"), "{err}");
    }
}
