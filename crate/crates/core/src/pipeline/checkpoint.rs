use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::{AdaptedEncoder, AdapterSpec, Mode};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numeric::{ParamSet, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// How a checkpoint was produced.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub seed: u64,
    pub profile: String,
    pub config_hash: String,
    /// content hash of the checkpoint this one was trained from
    pub parent: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub encoder: EncoderConfig,
    pub adapters: Vec<AdapterSpec>,
    pub fusion: bool,
    pub mode: Mode,
    pub tensors: Vec<TensorEntry>,
    pub provenance: Provenance,
    /// sha256 of the tensor blob
    pub content_hash: String,
}

fn blob(params: &ParamSet) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut entries = Vec::with_capacity(params.len());
    let mut bytes = Vec::new();
    for (name, p) in params.iter() {
        entries.push(TensorEntry { name: name.clone(), shape: p.tensor.shape().to_vec() });
        bytes.extend_from_slice(&p.tensor.to_le_bytes());
    }
    (entries, bytes)
}

/// Manifest and tensor blob for `model`, without touching the filesystem.
pub fn encode_checkpoint(model: &AdaptedEncoder, provenance: Provenance) -> (Manifest, Vec<u8>) {
    let (tensors, bytes) = blob(model.params());
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        encoder: model.config().clone(),
        adapters: model.adapters().to_vec(),
        fusion: model.has_fusion(),
        mode: model.mode(),
        tensors,
        provenance,
        content_hash: hex::encode(Sha256::digest(&bytes)),
    };
    (manifest, bytes)
}

/// Writes `manifest.json` and `tensors.bin` into `dir`; returns the content hash.
pub fn save_checkpoint(model: &AdaptedEncoder, provenance: Provenance, dir: &Path) -> Result<Manifest> {
    let (manifest, bytes) = encode_checkpoint(model, provenance);
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TENSORS_FILE), &bytes)?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} is not supported (expected {FORMAT_VERSION})",
            path.display(),
            manifest.format_version
        )));
    }
    Ok(manifest)
}

/// Reads a checkpoint back, verifying the blob hash and tensor sizes.
pub fn load_checkpoint(dir: &Path) -> Result<(AdaptedEncoder, Manifest)> {
    let manifest = load_manifest(dir)?;
    let path = dir.join(TENSORS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let hash = hex::encode(Sha256::digest(&bytes));
    if hash != manifest.content_hash {
        return Err(Error::Checkpoint(format!("{}: content hash mismatch", path.display())));
    }
    let total: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if total * 4 != bytes.len() {
        return Err(Error::Checkpoint(format!("{}: {} bytes for {total} values", path.display(), bytes.len())));
    }
    let mut params = ParamSet::new();
    let mut off = 0;
    for t in &manifest.tensors {
        let n: usize = t.shape.iter().product();
        let data = bytes[off..off + 4 * n].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        off += 4 * n;
        params.insert(t.name.clone(), Tensor::new(t.shape.clone(), data)?, false)?;
    }
    let model = AdaptedEncoder::from_parts(manifest.encoder.clone(), params, manifest.adapters.clone(), manifest.fusion, manifest.mode)?;
    Ok((model, manifest))
}
