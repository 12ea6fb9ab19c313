//! Single-file checkpoint: magic, manifest length, JSON manifest, then raw
//! little-endian `f64` payloads in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelOptions, ModelParameters};
use crate::corpus::RelationSet;
use crate::encoder::{EncoderConfig, Vocab};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DRECKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f64-le";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dtype: String,
    encoder: EncoderConfig,
    options: ModelOptions,
    relations: Vec<String>,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes(model: &Model, metadata: &BTreeMap<String, String>) -> Vec<u8> {
    let tensors = model.params.tensors();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: DTYPE.into(),
        encoder: model.encoder_config.clone(),
        options: model.options.clone(),
        relations: model.relations.labels().to_vec(),
        vocab: model.vocab.clone().into(),
        tensors: tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest always serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.params.num_values());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &tensors {
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, BTreeMap<String, String>)> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("unreadable manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Checkpoint(format!("unsupported dtype `{}`", manifest.dtype)));
    }
    manifest.encoder.validate()?;
    let relations = RelationSet::new(manifest.relations)?;
    let vocab = Vocab::from(manifest.vocab);
    if vocab.len() != manifest.encoder.vocab_size {
        return Err(bad("vocabulary size disagrees with the encoder config"));
    }

    let mut params = ModelParameters::init(&manifest.encoder, relations.len());
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, manifest lists {}",
            expected.len(),
            manifest.tensors.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name {
            return Err(Error::Checkpoint(format!("expected tensor `{name}`, found `{}`", entry.name)));
        }
        if *shape != entry.shape {
            return Err(Error::Shape {
                tensor: name.clone(),
                expected: shape.clone(),
                found: entry.shape.clone(),
            });
        }
    }
    let mut payload = &bytes[16 + len..];
    if payload.len() != 8 * params.num_values() {
        return Err(bad("payload size does not match the manifest"));
    }
    for slot in params.tensors_mut() {
        for v in slot.iter_mut() {
            let (head, rest) = payload.split_at(8);
            *v = f64::from_le_bytes(head.try_into().expect("8 bytes"));
            payload = rest;
        }
    }
    if !params.is_finite() {
        return Err(bad("non-finite parameter values"));
    }
    Ok((
        Model {
            params,
            encoder_config: manifest.encoder,
            vocab,
            relations,
            options: manifest.options,
        },
        manifest.metadata,
    ))
}

pub fn save_checkpoint(model: &Model, metadata: &BTreeMap<String, String>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model, metadata)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, BTreeMap<String, String>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads and checks every tensor against the shapes implied by `expected`
/// (its `vocab_size` is ignored; the vocabulary travels with the checkpoint).
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    expected: &EncoderConfig,
) -> Result<(Model, BTreeMap<String, String>)> {
    let (model, metadata) = load_checkpoint(path)?;
    let shape_of = EncoderConfig {
        vocab_size: model.encoder_config.vocab_size,
        seed: model.encoder_config.seed,
        ..expected.clone()
    };
    let reference = ModelParameters::init(&shape_of, model.relations.len());
    for (want, have) in reference.tensors().iter().zip(model.params.tensors()) {
        if want.shape != have.shape || want.name != have.name {
            return Err(Error::Shape {
                tensor: have.name,
                expected: want.shape.clone(),
                found: have.shape,
            });
        }
    }
    if reference.encoder.layers.len() != model.params.encoder.layers.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} encoder layers, expected {}",
            model.params.encoder.layers.len(),
            expected.layers
        )));
    }
    Ok((model, metadata))
}
