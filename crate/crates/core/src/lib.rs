//! Attention-based caption generation with Maximum-Mutual-Information beam
//! search, a noun-phrase repetition filter and captioning/diversity metrics.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`corpus`]: preprocessing, vocabulary, synthetic data and file formats.
//! - [`models`]: top-down attention decoder, FC baseline and language model.
//! - [`training`]: teacher-forcing loss, ADAM, checkpoints, training loops.
//! - [`decoding`]: beam search under the standard and MMI objectives.
//! - [`filter`]: noun-phrase chunking and repetition rules.
//! - [`metrics`]: BLEU-4, ROUGE-L, CIDEr-D, diversity, vocabulary usage, sweeps.

pub mod autodiff;
pub mod corpus;
pub mod decoding;
pub mod filter;
pub mod metrics;
pub mod models;
pub mod training;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use autodiff::{Tensor, TensorError};
pub use corpus::CorpusError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("sentence needs at least the begin and end tokens, got {0} tokens")]
    SentenceTooShort(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("vocabulary hash mismatch: expected {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("{0}")]
    Metric(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Error::Io {
            path: path.to_owned(),
            message: e.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
