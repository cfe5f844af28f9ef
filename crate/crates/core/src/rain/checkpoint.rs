//! Checkpoint container and its binary file format.
//!
//! Layout: the magic bytes "RAIN1", a little-endian u32 byte length, a UTF-8
//! JSON header (model config, label sets, vocabulary, parameter manifest of
//! name + shape), then each parameter's values as raw little-endian f32
//! arrays in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{RainConfig, RainError, RainModel};
use crate::corpus::{EmotionLabel, IntentionLabel, Vocabulary};
use crate::diffcore::{ParameterStore, Shape, Tensor};

const MAGIC: &[u8; 5] = b"RAIN1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("label vocabulary mismatch at label {0:?}")]
    LabelMismatch(String),
    #[error("parameter data truncated at {0:?}")]
    Truncated(String),
    #[error(transparent)]
    Rain(#[from] RainError),
}

#[derive(Serialize, Deserialize)]
struct LabelSets {
    intention: Vec<String>,
    emotion: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RainConfig,
    labels: LabelSets,
    vocab: Vec<String>,
    manifest: Vec<ManifestEntry>,
}

/// A trained model together with the vocabulary it was trained against.
pub struct Checkpoint {
    pub config: RainConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore<f32>,
}

impl Checkpoint {
    pub fn from_model(model: &RainModel<f32>, vocab: &Vocabulary) -> Self {
        Checkpoint {
            config: *model.config(),
            vocab: vocab.clone(),
            store: model.store().clone(),
        }
    }

    pub fn into_model(self) -> Result<(RainModel<f32>, Vocabulary), RainError> {
        let model = RainModel::from_parts(self.config, self.store)?;
        Ok((model, self.vocab))
    }

    /// A model over a copy of the stored parameters.
    pub fn to_model(&self) -> Result<RainModel<f32>, RainError> {
        RainModel::from_parts(self.config, self.store.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let io = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let header = Header {
            config: self.config,
            labels: LabelSets {
                intention: IntentionLabel::ALL.iter().map(|l| l.name().into()).collect(),
                emotion: EmotionLabel::ALL.iter().map(|l| l.name().into()).collect(),
            },
            vocab: self.vocab.tokens().to_vec(),
            manifest: self
                .store
                .iter()
                .map(|(_, p)| ManifestEntry {
                    name: p.name().to_string(),
                    shape: p.shape().dims(),
                })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = fs::File::create(path).map_err(io)?;
        out.write_all(MAGIC).map_err(io)?;
        out.write_all(&(header_json.len() as u32).to_le_bytes())
            .map_err(io)?;
        out.write_all(&header_json).map_err(io)?;
        for (_, p) in self.store.iter() {
            for &v in p.value().data() {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let io = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut file = fs::File::open(path).map_err(io)?;
        let mut magic = [0u8; 5];
        file.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut len_bytes = [0u8; 4];
        file.read_exact(&mut len_bytes).map_err(io)?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        file.read_exact(&mut header_json).map_err(io)?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;

        for (stored, built_in) in header
            .labels
            .intention
            .iter()
            .zip(IntentionLabel::ALL.iter().map(|l| l.name()))
        {
            if stored != built_in {
                return Err(CheckpointError::LabelMismatch(stored.clone()));
            }
        }
        if header.labels.intention.len() != IntentionLabel::COUNT {
            return Err(CheckpointError::Header("wrong intention label count".into()));
        }
        for (stored, built_in) in header
            .labels
            .emotion
            .iter()
            .zip(EmotionLabel::ALL.iter().map(|l| l.name()))
        {
            if stored != built_in {
                return Err(CheckpointError::LabelMismatch(stored.clone()));
            }
        }
        if header.labels.emotion.len() != EmotionLabel::COUNT {
            return Err(CheckpointError::Header("wrong emotion label count".into()));
        }

        let mut store = ParameterStore::new();
        for entry in &header.manifest {
            let shape = Shape::from_dims(&entry.shape).ok_or_else(|| {
                CheckpointError::Header(format!(
                    "parameter {:?} has unsupported shape {:?}",
                    entry.name, entry.shape
                ))
            })?;
            let mut data = vec![0f32; shape.len()];
            let mut buf = [0u8; 4];
            for v in &mut data {
                file.read_exact(&mut buf)
                    .map_err(|_| CheckpointError::Truncated(entry.name.clone()))?;
                *v = f32::from_le_bytes(buf);
            }
            let mut tensor = Tensor::zeros(shape);
            tensor.data_mut().copy_from_slice(&data);
            store
                .register_tensor(&entry.name, tensor)
                .map_err(|e| CheckpointError::Header(e.to_string()))?;
        }
        Ok(Checkpoint {
            config: header.config,
            vocab: Vocabulary::from_tokens(header.vocab),
            store,
        })
    }
}
