//! Checkpoint files.
//!
//! Layout:
//!
//! ```text
//! CTXTUNE-CHECKPOINT 1\n
//! <header byte length>\n
//! <JSON header: config, vocabulary, dtype, tensor manifest, payload length>
//! <payload: row-major little-endian floats, tensors in manifest order>
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::inverse::InverseModel;
use crate::numerics::{Float, ParamStore, Tensor, WIDE_FLOATS};
use crate::prompt::ForwardModel;
use crate::training::build_models;

const MAGIC: &str = "CTXTUNE-CHECKPOINT 1";
const DTYPE: &str = if WIDE_FLOATS { "f64" } else { "f32" };

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: RunConfig,
    vocab: Vec<String>,
    dtype: String,
    tensors: Vec<TensorEntry>,
    payload_bytes: usize,
}

/// Parsed checkpoint contents, not yet bound to a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub tensors: Vec<(String, Tensor)>,
}

fn stores<'a>(forward: &'a ForwardModel, inverse: &'a InverseModel) -> [&'a ParamStore; 2] {
    [&forward.store, &inverse.store]
}

pub fn encode(
    config: &RunConfig,
    vocab: &Vocab,
    forward: &ForwardModel,
    inverse: &InverseModel,
) -> Vec<u8> {
    let width = if WIDE_FLOATS { 8 } else { 4 };
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for store in stores(forward, inverse) {
        for (_, p) in store.iter() {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                offset: payload.len(),
            });
            for &v in p.tensor.values() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    debug_assert_eq!(payload.len() % width, 0);
    let header = Header {
        config: config.clone(),
        vocab: vocab.tokens().to_vec(),
        dtype: DTYPE.to_string(),
        tensors,
        payload_bytes: payload.len(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = format!("{MAGIC}\n{}\n", header.len()).into_bytes();
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub fn save(
    path: impl AsRef<Path>,
    config: &RunConfig,
    vocab: &Vocab,
    forward: &ForwardModel,
    inverse: &InverseModel,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(config, vocab, forward, inverse)).map_err(|e| Error::io(path, e))
}

fn take_line<'a>(
    bytes: &'a [u8],
    what: &str,
    fail: &impl Fn(String) -> Error,
) -> Result<(&'a [u8], &'a [u8])> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fail(format!("missing {what} line")))?;
    Ok((&bytes[..end], &bytes[end + 1..]))
}

impl Checkpoint {
    /// Parses `bytes`; `path` only labels errors.
    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        let fail = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let (magic, rest) = take_line(bytes, "magic", &fail)?;
        if magic != MAGIC.as_bytes() {
            return Err(fail("not a checkpoint file (bad magic line)".into()));
        }
        let (len_line, rest) = take_line(rest, "header length", &fail)?;
        let header_len: usize = std::str::from_utf8(len_line)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail("header length is not a number".into()))?;
        if rest.len() < header_len {
            return Err(fail(format!(
                "header truncated: expected {header_len} bytes, found {}",
                rest.len()
            )));
        }
        let (header, payload) = rest.split_at(header_len);
        let header: Header =
            serde_json::from_slice(header).map_err(|e| fail(format!("corrupted manifest: {e}")))?;
        let width = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(fail(format!("unsupported dtype {other:?}"))),
        };
        if payload.len() != header.payload_bytes {
            return Err(fail(format!(
                "payload {}: expected {} bytes, found {}",
                if payload.len() < header.payload_bytes {
                    "truncated"
                } else {
                    "has trailing bytes"
                },
                header.payload_bytes,
                payload.len()
            )));
        }
        let vocab =
            Vocab::from_tokens(header.vocab).map_err(|e| fail(format!("bad vocabulary: {e}")))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_offset = 0;
        for entry in header.tensors {
            let numel: usize = entry.shape.iter().product();
            let end = entry.offset + numel * width;
            if entry.offset != expected_offset || end > payload.len() {
                return Err(fail(format!(
                    "tensor {}: offset {} is inconsistent with the manifest",
                    entry.name, entry.offset
                )));
            }
            let values: Vec<Float> = payload[entry.offset..end]
                .chunks_exact(width)
                .map(|c| {
                    if width == 4 {
                        f32::from_le_bytes(c.try_into().expect("4 bytes")) as Float
                    } else {
                        f64::from_le_bytes(c.try_into().expect("8 bytes")) as Float
                    }
                })
                .collect();
            let tensor = Tensor::new(&entry.shape, values)
                .map_err(|e| fail(format!("tensor {}: {e}", entry.name)))?;
            tensors.push((entry.name, tensor));
            expected_offset = end;
        }
        if expected_offset != payload.len() {
            return Err(fail(format!(
                "manifest covers {expected_offset} of {} payload bytes",
                payload.len()
            )));
        }
        Ok(Self {
            config: header.config,
            vocab,
            tensors,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(path, &bytes)
    }

    /// Builds models under `config` and fills them from the stored tensors.
    /// Names must match exactly and every shape must agree.
    pub fn instantiate(
        &self,
        path: &Path,
        config: &RunConfig,
    ) -> Result<(ForwardModel, InverseModel)> {
        let fail = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let (mut forward, mut inverse) = build_models(
            &config.model,
            config.prompt.k,
            &self.vocab,
            config.train.seed,
        )?;
        let expected: usize = forward.store.len() + inverse.store.len();
        if expected != self.tensors.len() {
            return Err(fail(format!(
                "checkpoint has {} tensors but the model has {expected}",
                self.tensors.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (name, tensor) in &self.tensors {
            if !seen.insert(name.as_str()) {
                return Err(fail(format!("tensor {name} appears twice in the manifest")));
            }
            let store = if let Some(id) = forward.store.find(name) {
                Some((&mut forward.store, id))
            } else {
                inverse.store.find(name).map(|id| (&mut inverse.store, id))
            };
            let Some((store, id)) = store else {
                return Err(fail(format!("tensor {name} does not exist in the model")));
            };
            let slot = store.get_mut(id);
            if slot.shape() != tensor.shape() {
                return Err(fail(format!(
                    "tensor {name}: checkpoint shape {:?} but the model expects {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            slot.values_mut().copy_from_slice(tensor.values());
        }
        Ok((forward, inverse))
    }
}

/// Reads a checkpoint and rebuilds its models under the stored configuration.
pub fn load(path: impl AsRef<Path>) -> Result<(RunConfig, Vocab, ForwardModel, InverseModel)> {
    let path = path.as_ref();
    let ckpt = Checkpoint::read(path)?;
    let (forward, inverse) = ckpt.instantiate(path, &ckpt.config)?;
    Ok((ckpt.config, ckpt.vocab, forward, inverse))
}
