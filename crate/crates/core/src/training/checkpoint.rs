use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::models::{build_model, is_encoder_param, Dims, ModelKind, Trainable};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMIC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: ModelKind,
    dims: Dims,
    tensors: Vec<TensorEntry>,
    config: serde_json::Value,
    vocab_hash: String,
    epoch: usize,
    best_cider_d: Option<f64>,
    best_perplexity: Option<f64>,
}

/// Parameters plus the metadata needed to resume, evaluate or transfer.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub dims: Dims,
    pub tensors: Vec<(String, Tensor)>,
    pub config: serde_json::Value,
    pub vocab_hash: String,
    pub epoch: usize,
    pub best_cider_d: Option<f64>,
    pub best_perplexity: Option<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &dyn Trainable, vocab_hash: &str, config: serde_json::Value, epoch: usize) -> Self {
        Self {
            kind: model.kind(),
            dims: model.dims(),
            tensors: model
                .parameters()
                .into_iter()
                .map(|(n, t)| (n.to_owned(), t.clone()))
                .collect(),
            config,
            vocab_hash: vocab_hash.to_owned(),
            epoch,
            best_cider_d: None,
            best_perplexity: None,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the model; fails if any tensor is missing or misshapen.
    pub fn to_model(&self) -> Result<Box<dyn Trainable>> {
        let mut model = build_model(self.kind, self.dims, &mut ChaCha8Rng::seed_from_u64(0))?;
        load_parameters(model.as_mut(), &self.tensors)?;
        Ok(model)
    }

    pub fn check_vocab(&self, vocab_hash: &str) -> Result<()> {
        if self.vocab_hash != vocab_hash {
            return Err(Error::VocabMismatch {
                expected: vocab_hash.to_owned(),
                found: self.vocab_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind,
            dims: self.dims,
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            epoch: self.epoch,
            best_cider_d: self.best_cider_d,
            best_perplexity: self.best_perplexity,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let floats: usize = self.tensors.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(12 + json.len() + 8 * floats);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing MMIC magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = word(8) as usize;
        let body_start = 12 + hlen;
        if bytes.len() < body_start {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&bytes[12..body_start]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let floats: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        let expected = body_start + 8 * floats;
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let mut values = bytes[body_start..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n = e.shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            tensors.push((e.name, Tensor::new(e.shape, data)?));
        }
        Ok(Self {
            kind: header.kind,
            dims: header.dims,
            tensors,
            config: header.config,
            vocab_hash: header.vocab_hash,
            epoch: header.epoch,
            best_cider_d: header.best_cider_d,
            best_perplexity: header.best_perplexity,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Overwrites `model`'s parameters with equally named tensors.
pub fn load_parameters(model: &mut dyn Trainable, tensors: &[(String, Tensor)]) -> Result<()> {
    for (name, t) in model.parameters_mut() {
        let src = tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if src.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: shape {:?} does not match {:?}",
                src.shape(),
                t.shape()
            )));
        }
        *t = src.clone();
    }
    Ok(())
}

/// Copies the encoder projection from `source` into `target`, leaving every
/// other parameter as initialized.
pub fn transfer_encoder_weights(source: &Checkpoint, target: &mut dyn Trainable) -> Result<()> {
    let mut copied = 0;
    for (name, t) in target.parameters_mut() {
        if !is_encoder_param(name) {
            continue;
        }
        let src = source
            .tensor(name)
            .ok_or_else(|| Error::Checkpoint(format!("source has no tensor {name}")))?;
        if src.shape() != t.shape() {
            return Err(Error::Dimension(format!(
                "encoder tensor {name}: source {:?} vs target {:?}",
                src.shape(),
                t.shape()
            )));
        }
        *t = src.clone();
        copied += 1;
    }
    if copied == 0 {
        return Err(Error::Checkpoint("target model has no encoder projection".into()));
    }
    Ok(())
}
