//! Directory archive: `manifest.json` plus one little-endian f32 file per tensor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ImuClipModel, ModelConfig, ModelError, Result};
use crate::dataset::Normalizer;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

/// Everything inference needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ImuClipModel,
    pub normalizer: Normalizer,
    pub class_names: Vec<String>,
    pub corpus_hash: String,
    pub text_encoder_id: String,
    pub format_version: u32,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    class_names: Vec<String>,
    corpus_hash: String,
    text_encoder_id: String,
    constant_channel_mask: Vec<bool>,
    tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn tensor_file(name: &str) -> String {
    format!("{name}.bin")
}

fn write_tensor(dir: &Path, name: &str, values: &[f32]) -> Result<()> {
    let path = dir.join(tensor_file(name));
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&path, bytes).map_err(io_err(&path))
}

fn read_tensor(dir: &Path, entry: &TensorEntry) -> Result<Vec<f32>> {
    let path: PathBuf = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ModelError::CorruptArchive(format!("missing tensor file {}", entry.file)),
        _ => ModelError::Io { path: path.clone(), source: e },
    })?;
    let want = entry.shape[0] * entry.shape[1] * 4;
    if bytes.len() != want {
        return Err(ModelError::CorruptArchive(format!(
            "tensor `{}` has {} bytes, expected {want}",
            entry.name,
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::CorruptArchive(format!("tensor `{}` has non-finite values", entry.name)));
    }
    Ok(values)
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tensors = Vec::new();
    for p in ckpt.model.params() {
        write_tensor(dir, &p.name, &p.value.data)?;
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape(),
            file: tensor_file(&p.name),
        });
    }
    let c = ckpt.normalizer.channels();
    for (name, values) in [("normalizer.mean", &ckpt.normalizer.mean), ("normalizer.std", &ckpt.normalizer.std)] {
        write_tensor(dir, name, values)?;
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: [1, c],
            file: tensor_file(name),
        });
    }
    let manifest = Manifest {
        format_version: ckpt.format_version,
        config: ckpt.model.config.clone(),
        class_names: ckpt.class_names.clone(),
        corpus_hash: ckpt.corpus_hash.clone(),
        text_encoder_id: ckpt.text_encoder_id.clone(),
        constant_channel_mask: ckpt.normalizer.constant_channel_mask.clone(),
        tensors,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ModelError::CorruptArchive(format!("manifest: {e}")))?;
    if let Some(found) = raw.get("format_version").and_then(|v| v.as_u64()) {
        if found != CHECKPOINT_FORMAT_VERSION as u64 {
            return Err(ModelError::VersionMismatch {
                found: found as u32,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
    }
    let manifest: Manifest =
        serde_json::from_value(raw).map_err(|e| ModelError::CorruptArchive(format!("manifest: {e}")))?;
    if manifest.class_names.is_empty() {
        return Err(ModelError::CorruptArchive("empty class list".into()));
    }
    let mut model = ImuClipModel::new(manifest.config.clone(), 0)?;
    let find = |name: &str| {
        manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| ModelError::CorruptArchive(format!("manifest lacks tensor `{name}`")))
    };
    for p in model.params_mut() {
        let entry = find(&p.name)?;
        if entry.shape != p.shape() {
            return Err(ModelError::CorruptArchive(format!(
                "tensor `{}` has shape {:?}, config implies {:?}",
                p.name,
                entry.shape,
                p.shape()
            )));
        }
        p.value.data = read_tensor(dir, entry)?;
    }
    let mean = read_tensor(dir, find("normalizer.mean")?)?;
    let std = read_tensor(dir, find("normalizer.std")?)?;
    if mean.len() != manifest.config.channels
        || std.len() != mean.len()
        || manifest.constant_channel_mask.len() != mean.len()
    {
        return Err(ModelError::CorruptArchive("normalizer does not match channel count".into()));
    }
    Ok(Checkpoint {
        model,
        normalizer: Normalizer {
            mean,
            std,
            constant_channel_mask: manifest.constant_channel_mask,
        },
        class_names: manifest.class_names,
        corpus_hash: manifest.corpus_hash,
        text_encoder_id: manifest.text_encoder_id,
        format_version: manifest.format_version,
    })
}
