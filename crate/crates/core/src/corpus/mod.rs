//! Text preprocessing, vocabulary, corpus persistence and the synthetic
//! outfit/feedback generator.

mod io;
mod preprocess;
pub mod synth;
mod vocab;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

pub use io::{load_corpus, read_grid_file, save_corpus, write_grid_file, GRID_MAGIC};
pub use preprocess::preprocess_sentence;
pub use synth::{generate_synthetic_corpus, synthetic_lexicon, AttributeInventory, SynthConfig};
pub use vocab::{
    build_vocabulary, load_lexicon, save_lexicon, Lexicon, Pos, Vocabulary, BOS_TOKEN,
    DEFAULT_MIN_COUNT_EXCLUSIVE, EOS_TOKEN, UNK_TOKEN,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("sentence is empty after preprocessing: {0:?}")]
    EmptySentence(String),
    #[error("token {0:?} has no part-of-speech entry in the lexicon")]
    MissingPos(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_owned(),
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CorpusError {
    fn from(e: serde_json::Error) -> Self {
        CorpusError::Format(e.to_string())
    }
}

/// The two kinds of fashion feedback; each gets its own models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FeedbackType {
    Good,
    Tip,
}

impl fmt::Display for FeedbackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackType::Good => "GOOD",
            FeedbackType::Tip => "TIP",
        })
    }
}

impl FromStr for FeedbackType {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GOOD" => Ok(FeedbackType::Good),
            "TIP" => Ok(FeedbackType::Tip),
            _ => Err(CorpusError::Format(format!("unknown feedback type {s:?}"))),
        }
    }
}

/// Spatial image encoding: `height × width` cells of `depth` features each,
/// stored row-major as `f32` (the on-disk precision).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    depth: usize,
    values: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, depth: usize, values: Vec<f32>) -> Result<Self, CorpusError> {
        if height == 0 || width == 0 || depth == 0 {
            return Err(CorpusError::Format("grid dimensions must be positive".into()));
        }
        if values.len() != height * width * depth {
            return Err(CorpusError::Format(format!(
                "grid {height}x{width}x{depth} needs {} values, got {}",
                height * width * depth,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::Format("grid contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            depth,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_cells(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn cell(&self, i: usize) -> &[f32] {
        &self.values[i * self.depth..(i + 1) * self.depth]
    }

    /// Cells as a `[H·W, D]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.values.iter().map(|&v| v as f64).collect();
        Tensor::new(vec![self.num_cells(), self.depth], data).expect("grid shape is valid")
    }
}

/// One image with its feedback sentences (already tokenized).
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub image_id: String,
    pub feedback_type: FeedbackType,
    pub grid: FeatureGrid,
    pub sentences: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn sentences(&self) -> Vec<Vec<String>> {
        self.examples
            .iter()
            .flat_map(|e| e.sentences.iter().cloned())
            .collect()
    }

    /// Checks the per-example invariant (at least one sentence).
    pub fn validate(&self) -> Result<(), CorpusError> {
        for e in &self.examples {
            if e.sentences.is_empty() {
                return Err(CorpusError::Format(format!("{} has no sentences", e.image_id)));
            }
        }
        Ok(())
    }

    /// Encodes every sentence with `vocab`.
    pub fn encode(&self, vocab: &Vocabulary) -> Vec<EncodedExample> {
        self.examples
            .iter()
            .map(|e| EncodedExample {
                image_id: e.image_id.clone(),
                sentences: e.sentences.iter().map(|s| vocab.encode(s)).collect(),
            })
            .collect()
    }
}

/// Sentences of one image as framed token-id sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub image_id: String,
    pub sentences: Vec<Vec<usize>>,
}

/// Evaluation images with dense references (at least two per image).
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet(Corpus);

impl EvalSet {
    pub fn new(corpus: Corpus) -> Result<Self, CorpusError> {
        for e in &corpus.examples {
            if e.sentences.len() < 2 {
                return Err(CorpusError::Format(format!(
                    "eval image {} has {} references, need at least 2",
                    e.image_id,
                    e.sentences.len()
                )));
            }
        }
        Ok(Self(corpus))
    }

    pub fn corpus(&self) -> &Corpus {
        &self.0
    }

    pub fn examples(&self) -> &[Example] {
        &self.0.examples
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_corpus(self) -> Corpus {
        self.0
    }

    /// Reference sentences per image, in example order.
    pub fn references(&self) -> Vec<Vec<Vec<String>>> {
        self.examples().iter().map(|e| e.sentences.clone()).collect()
    }
}
