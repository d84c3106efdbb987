//! Checkpoints: a JSON manifest (architecture, per-parameter shape/offset/
//! trainability, blob checksum) next to a raw little-endian f64 blob.
//! Round-trips are bit-exact; the checksum catches blob corruption or a
//! manifest/blob mismatch.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rvos_core::params::ParamStore;
use rvos_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ArchConfig;
use crate::util::fnv1a;

/// Manifest format version.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    offset: usize,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    arch: ArchConfig,
    /// Stage tag recorded by the producer (`pretrain`, `adapters`, ...).
    stage: String,
    params: Vec<ParamRecord>,
    /// FNV-1a over the blob bytes.
    checksum: u64,
    /// Blob filename, relative to the manifest.
    blob: String,
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(blob)
}

/// Write `store` to `path` (the JSON manifest) plus a `.bin` blob beside it.
pub fn save(path: &Path, store: &ParamStore, arch: &ArchConfig, stage: &str) -> Result<()> {
    let mut params = Vec::with_capacity(store.len());
    let mut blob = Vec::new();
    let mut offset = 0usize;
    for (_, name, value, trainable) in store.iter() {
        params.push(ParamRecord {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            offset,
            trainable,
        });
        for v in value.data() {
            blob.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        offset += value.len();
    }
    let blob_name = match path.file_stem() {
        Some(stem) => format!("{}.bin", stem.to_string_lossy()),
        None => bail!("checkpoint path {} has no file name", path.display()),
    };
    let manifest = Manifest {
        version: FORMAT_VERSION,
        arch: arch.clone(),
        stage: stage.to_string(),
        params,
        checksum: fnv1a(&blob),
        blob: blob_name.clone(),
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    std::fs::write(blob_path(path, &blob_name), &blob)
        .with_context(|| format!("writing blob beside {}", path.display()))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Load a checkpoint: returns the parameter store (bit-exact), the stored
/// architecture, and the producer's stage tag.
pub fn load(path: &Path) -> Result<(ParamStore, ArchConfig, String)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing checkpoint {}", path.display()))?;
    if manifest.version != FORMAT_VERSION {
        bail!(
            "checkpoint {} has format version {}, expected {}",
            path.display(),
            manifest.version,
            FORMAT_VERSION
        );
    }
    let blob = std::fs::read(blob_path(path, &manifest.blob))
        .with_context(|| format!("reading blob of {}", path.display()))?;
    if fnv1a(&blob) != manifest.checksum {
        bail!("checkpoint {}: blob checksum mismatch", path.display());
    }
    if blob.len() % 8 != 0 {
        bail!("checkpoint {}: blob length {} not a multiple of 8", path.display(), blob.len());
    }
    let total = blob.len() / 8;
    let mut store = ParamStore::new();
    for rec in &manifest.params {
        let len: usize = rec.shape.iter().product();
        if rec.offset + len > total {
            bail!(
                "checkpoint {}: parameter {} overruns the blob",
                path.display(),
                rec.name
            );
        }
        let mut data = Vec::with_capacity(len);
        for i in 0..len {
            let at = (rec.offset + i) * 8;
            let bits = u64::from_le_bytes(blob[at..at + 8].try_into().unwrap());
            data.push(f64::from_bits(bits));
        }
        let tensor = Tensor::new(&rec.shape, data)
            .with_context(|| format!("restoring parameter {}", rec.name))?;
        store
            .register(&rec.name, tensor, rec.trainable)
            .with_context(|| format!("registering parameter {}", rec.name))?;
    }
    Ok((store, manifest.arch, manifest.stage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rvos_core::model::{Model, ModelConfig};
    use rvos_core::rng::Rng;

    fn fresh_store() -> (ParamStore, ArchConfig) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(11);
        let cfg = ModelConfig::default();
        Model::register(&mut store, cfg.clone(), &mut rng).unwrap();
        (store, ArchConfig::from_model_config(&cfg))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (store, arch) = fresh_store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        save(&path, &store, &arch, "pretrain").unwrap();
        let (loaded, arch2, stage) = load(&path).unwrap();
        assert_eq!(stage, "pretrain");
        assert_eq!(arch2, arch);
        assert_eq!(loaded.len(), store.len());
        for (id, name, value, trainable) in store.iter() {
            let lid = loaded.id(name).unwrap();
            assert_eq!(loaded.is_trainable(lid), trainable, "{name}");
            let lv = loaded.value(lid);
            assert_eq!(lv.shape(), value.shape());
            for (a, b) in lv.data().iter().zip(value.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name}");
            }
            let _ = id;
        }
        // The restored store drives the model directly.
        Model::from_store(&loaded, arch2.to_model_config()).unwrap();
    }

    #[test]
    fn checksum_detects_blob_corruption() {
        let (store, arch) = fresh_store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        save(&path, &store, &arch, "pretrain").unwrap();
        let blob = dir.path().join("model.ckpt.bin");
        let mut bytes = std::fs::read(&blob).unwrap();
        bytes[64] ^= 0xff;
        std::fs::write(&blob, bytes).unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn missing_namespace_is_rejected_at_model_attach() {
        let (store, arch) = fresh_store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        save(&path, &store, &arch, "pretrain").unwrap();
        let (loaded, _, _) = load(&path).unwrap();
        // An architecture whose adapter dims disagree with the stored
        // parameters fails to attach (incompatible namespaces/shapes).
        let mut other = ModelConfig::default();
        other.d_dec = 16;
        assert!(Model::from_store(&loaded, other).is_err());
    }
}
