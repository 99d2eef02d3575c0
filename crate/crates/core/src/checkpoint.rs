//! Binary checkpoint format.
//!
//! Layout: the 8-byte magic `LEVEMB01`, a little-endian `u64` header length, a UTF-8
//! JSON header, then raw little-endian `f32` arrays in manifest order. The header holds
//! the architecture, training metadata and a manifest of named arrays with shapes and
//! byte offsets relative to the start of the array section.
//!
//! Alongside the learnable parameters the file stores the Adam moments, step counter
//! and batch-norm running statistics, so a resumed run continues exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ndnet::{Adam, AdamConfig, Parameter, Tensor};
use crate::siamese::{ArchitectureSpec, EmbeddingModel, LossKind, Trainer};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LEVEMB01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub loss: LossKind,
    pub seed: u64,
    /// Hex digest of the training data, as computed by the caller.
    pub dataset_hash: String,
    pub mean_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: ArchitectureSpec,
    meta: CheckpointMeta,
    epochs_done: usize,
    adam: AdamConfig,
    adam_step: u64,
    arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub trainer: Trainer,
}

fn manifest(spec: &ArchitectureSpec) -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    for (name, shape) in spec.parameter_shapes() {
        v.push((format!("{name}.adam_m"), shape.clone()));
        v.push((format!("{name}.adam_v"), shape.clone()));
        v.push((name, shape));
    }
    v.push(("bn.running_mean".into(), vec![spec.embedding_dim]));
    v.push(("bn.running_var".into(), vec![spec.embedding_dim]));
    v
}

impl Checkpoint {
    pub fn new(trainer: Trainer, meta: CheckpointMeta) -> Self {
        Self { meta, trainer }
    }

    pub fn model(&self) -> &EmbeddingModel<f32> {
        &self.trainer.model
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = &self.trainer.model;
        let mut arrays: Vec<&Tensor<f32>> = Vec::new();
        for p in model.parameters() {
            arrays.push(&p.adam_m);
            arrays.push(&p.adam_v);
            arrays.push(&p.value);
        }
        arrays.push(&model.bn.state.running_mean);
        arrays.push(&model.bn.state.running_var);
        let names = manifest(&model.spec);
        let mut entries = Vec::with_capacity(names.len());
        let mut offset = 0u64;
        for ((name, shape), a) in names.into_iter().zip(&arrays) {
            if a.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("array {name} has shape {:?}, expected {shape:?}", a.shape())));
            }
            let bytes = (a.len() * 4) as u64;
            entries.push(ArrayEntry {
                name,
                shape,
                offset,
                bytes,
            });
            offset += bytes;
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            spec: model.spec.clone(),
            meta: self.meta.clone(),
            epochs_done: self.trainer.epochs_done,
            adam: self.trainer.optimizer.cfg,
            adam_step: self.trainer.optimizer.t,
            arrays: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in arrays {
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("missing LEVEMB01 magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..body_start])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} not supported (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        header.spec.validate()?;
        let expected = manifest(&header.spec);
        if header.arrays.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "manifest lists {} arrays, architecture needs {}",
                header.arrays.len(),
                expected.len()
            )));
        }
        let body = &bytes[body_start..];
        let mut offset = 0u64;
        let mut tensors = Vec::with_capacity(expected.len());
        for (entry, (name, shape)) in header.arrays.iter().zip(&expected) {
            let count: usize = shape.iter().product();
            if &entry.name != name || &entry.shape != shape || entry.bytes != (count * 4) as u64 || entry.offset != offset {
                return Err(Error::Checkpoint(format!(
                    "manifest entry {} {:?} does not match architecture ({name} {shape:?})",
                    entry.name, entry.shape
                )));
            }
            let start = offset as usize;
            let end = start + count * 4;
            if end > body.len() {
                return Err(Error::Checkpoint(format!("array {name} truncated")));
            }
            let data = body[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::from_vec(shape, data)?);
            offset += entry.bytes;
        }
        if offset as usize != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after arrays",
                body.len() - offset as usize
            )));
        }
        let mut it = tensors.into_iter();
        let mut params = Vec::new();
        for (name, _) in header.spec.parameter_shapes() {
            let m = it.next().expect("count checked");
            let v = it.next().expect("count checked");
            let mut p = Parameter::new(name, it.next().expect("count checked"));
            p.adam_m = m;
            p.adam_v = v;
            params.push(p);
        }
        let running_mean = it.next().expect("count checked");
        let running_var = it.next().expect("count checked");
        let model = EmbeddingModel::from_parts(header.spec, params, running_mean, running_var)?;
        let trainer = Trainer {
            model,
            optimizer: Adam {
                cfg: header.adam,
                t: header.adam_step,
            },
            epochs_done: header.epochs_done,
        };
        Ok(Self {
            meta: header.meta,
            trainer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
