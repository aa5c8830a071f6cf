//! Checkpoint container.
//!
//! Layout: the 8-byte magic `SYMGANCK`, a little-endian `u32` header length,
//! a JSON header, then every parameter and optimizer array as raw
//! little-endian `f32`. The header carries the config echo, the step, the
//! vocabulary fingerprint, the bundle skeleton (arrays emptied) and an index
//! of `(name, offset, len)` entries into the blob.

use std::path::Path;

use serde::{Deserialize, Serialize};
use symgan_core::models::ModelBundle;
use symgan_core::nn::ParamSet;
use symgan_core::vocab::ClassVocabulary;

use crate::error::{Error, Result};
use crate::imageio::write_atomic;

const MAGIC: &[u8; 8] = b"SYMGANCK";
const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    /// The pipeline config the run was started with, verbatim.
    pub config_echo: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    step: u64,
    vocab_fingerprint: u64,
    config: String,
    bundle: ModelBundle,
    tensors: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    offset: usize,
    len: usize,
}

fn params_arrays<'a>(prefix: &str, p: &'a mut ParamSet, out: &mut Vec<(String, &'a mut Vec<f32>)>) {
    for t in p.tensors.iter_mut() {
        out.push((format!("{prefix}.{}", t.name), &mut t.data));
    }
    for t in p.buffers.iter_mut() {
        out.push((format!("{prefix}.buffer.{}", t.name), &mut t.data));
    }
}

fn adam_arrays<'a>(prefix: &str, m: &'a mut [Vec<f32>], v: &'a mut [Vec<f32>], out: &mut Vec<(String, &'a mut Vec<f32>)>) {
    for (i, a) in m.iter_mut().enumerate() {
        out.push((format!("{prefix}.m{i}"), a));
    }
    for (i, a) in v.iter_mut().enumerate() {
        out.push((format!("{prefix}.v{i}"), a));
    }
}

/// Every float array of the bundle in a fixed order.
fn arrays(b: &mut ModelBundle) -> Vec<(String, &mut Vec<f32>)> {
    let mut out = Vec::new();
    params_arrays("generator", &mut b.generator.params, &mut out);
    params_arrays("discriminator", &mut b.discriminator.params, &mut out);
    params_arrays("classifier", &mut b.classifier.params, &mut out);
    adam_arrays("adam.generator", &mut b.opt_generator.m, &mut b.opt_generator.v, &mut out);
    adam_arrays("adam.discriminator", &mut b.opt_discriminator.m, &mut b.opt_discriminator.v, &mut out);
    adam_arrays("adam.classifier", &mut b.opt_classifier.m, &mut b.opt_classifier.v, &mut out);
    out
}

pub fn encode(bundle: &ModelBundle, config_echo: &str) -> Vec<u8> {
    let mut skeleton = bundle.clone();
    let mut index = Vec::new();
    let mut blob = Vec::new();
    for (name, data) in arrays(&mut skeleton) {
        index.push(IndexEntry {
            name,
            offset: blob.len() / 4,
            len: data.len(),
        });
        for v in data.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        *data = Vec::new();
    }
    let header = Header {
        format: FORMAT,
        step: bundle.step,
        vocab_fingerprint: bundle.vocab_fingerprint,
        config: config_echo.to_string(),
        bundle: skeleton,
        tensors: index,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::BadCheckpoint(m.to_string());
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    if header.format != FORMAT {
        return Err(Error::BadCheckpoint(format!("unsupported format {}", header.format)));
    }
    let blob = &bytes[12 + hlen..];
    if blob.len() % 4 != 0 {
        return Err(bad("blob is not whole f32s"));
    }
    let mut bundle = header.bundle;
    let slots = arrays(&mut bundle);
    if slots.len() != header.tensors.len() {
        return Err(bad("tensor index does not match the model layout"));
    }
    for ((name, slot), entry) in slots.into_iter().zip(&header.tensors) {
        if name != entry.name {
            return Err(Error::BadCheckpoint(format!("expected tensor {name}, found {}", entry.name)));
        }
        let raw = blob
            .get(entry.offset * 4..(entry.offset + entry.len) * 4)
            .ok_or_else(|| Error::BadCheckpoint(format!("tensor {name} out of range")))?;
        *slot = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    }
    Ok(Checkpoint {
        bundle,
        config_echo: header.config,
    })
}

pub fn save(path: &Path, bundle: &ModelBundle, config_echo: &str) -> Result<()> {
    write_atomic(path, &encode(bundle, config_echo))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::MissingPath { what: "checkpoint", path: path.to_path_buf() });
    }
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|e| match e {
        Error::BadCheckpoint(m) => Error::BadCheckpoint(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Loads a checkpoint and refuses it when the vocabulary differs.
pub fn load_for(path: &Path, vocab: &ClassVocabulary) -> Result<Checkpoint> {
    let ck = load(path)?;
    ck.bundle.check_vocab(vocab)?;
    Ok(ck)
}
