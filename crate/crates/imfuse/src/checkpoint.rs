//! Single-file checkpoint: `IMFUSECK`, a little-endian `u64` header length,
//! the JSON header, then little-endian `f64` parameter blocks addressed by
//! the header's name → offset index.

use std::path::Path;

use imfuse_core::model::Model;
use imfuse_core::{ParamStore, Rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"IMFUSECK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BlockIndex {
    name: String,
    shape: Vec<usize>,
    /// In `f64` units from the start of the data section.
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: RunConfig,
    fold: Option<usize>,
    survival_cuts: Vec<f64>,
    rng_algorithm: String,
    rng_seed: u64,
    steps: u64,
    student: Vec<BlockIndex>,
    teacher: Vec<BlockIndex>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub fold: Option<usize>,
    /// Survival bin boundaries fitted on the training fold.
    pub survival_cuts: Vec<f64>,
    pub steps: u64,
    pub student: ParamStore,
    pub teacher: Option<ParamStore>,
}

fn ckpt_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

fn index(store: &ParamStore, data: &mut Vec<f64>) -> Vec<BlockIndex> {
    store
        .iter()
        .map(|(_, p)| {
            let offset = data.len();
            data.extend_from_slice(p.value.data());
            BlockIndex {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset,
            }
        })
        .collect()
}

impl Checkpoint {
    /// A fresh model and parameter store of the checkpoint's architecture.
    pub fn model(&self) -> Result<Model> {
        let (model, fresh) = Model::init(self.config.model_config(), self.config.seed)?;
        fresh.check_same_structure(&self.student)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data = Vec::new();
        let student = index(&self.student, &mut data);
        let teacher = self.teacher.as_ref().map(|t| index(t, &mut data)).unwrap_or_default();
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            fold: self.fold,
            survival_cuts: self.survival_cuts.clone(),
            rng_algorithm: Rng::ALGORITHM.to_string(),
            rng_seed: self.config.seed,
            steps: self.steps,
            student,
            teacher,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(ckpt_err("not an imfuse checkpoint"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| ckpt_err("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.format_version != FORMAT_VERSION {
            return Err(ckpt_err(format!("unsupported format version {}", header.format_version)));
        }
        if header.rng_algorithm != Rng::ALGORITHM {
            return Err(ckpt_err(format!("written with rng `{}`", header.rng_algorithm)));
        }
        let raw = &bytes[16 + len..];
        if raw.len() % 8 != 0 {
            return Err(ckpt_err("parameter section is not a whole number of f64"));
        }
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let rebuild = |blocks: &[BlockIndex]| -> Result<ParamStore> {
            let mut store = ParamStore::new();
            for b in blocks {
                let n: usize = b.shape.iter().product();
                let slice = data
                    .get(b.offset..b.offset + n)
                    .ok_or_else(|| ckpt_err(format!("block `{}` out of range", b.name)))?;
                store.add(b.name.clone(), Tensor::new(b.shape.clone(), slice.to_vec())?)?;
            }
            Ok(store)
        };
        let student = rebuild(&header.student)?;
        let teacher = if header.teacher.is_empty() {
            None
        } else {
            Some(rebuild(&header.teacher)?)
        };
        let ck = Checkpoint {
            config: header.config,
            fold: header.fold,
            survival_cuts: header.survival_cuts,
            steps: header.steps,
            student,
            teacher,
        };
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
