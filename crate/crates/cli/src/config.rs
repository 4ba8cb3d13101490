//! The flat run configuration: one TOML document whose keys cover data
//! generation, model size, training, decoding and sweeps.
//!
//! Resolution order is defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mmicap::corpus::{AttributeInventory, FeedbackType, SynthConfig, DEFAULT_MIN_COUNT_EXCLUSIVE};
use mmicap::decoding::{default_beta_cutoff, DecodingConfig, DEFAULT_MAX_LENGTH};
use mmicap::models::{Dims, ModelKind};
use mmicap::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Every random stream (data, init, batching, dropout, baseline draws)
    /// derives from this.
    pub seed: u64,
    pub threads: usize,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,

    pub feedback_type: FeedbackType,
    pub grid_height: usize,
    pub grid_width: usize,
    pub grid_depth: usize,
    pub num_train_images: usize,
    pub num_eval_images: usize,
    pub sentences_per_image: usize,
    pub refs_per_eval_image: usize,
    pub generic_rate: f64,
    pub signal_scale: f64,
    pub noise_std: f64,
    /// Tokens must occur more often than this to enter the vocabulary.
    pub min_count: usize,

    pub model: ModelKind,
    /// Embedding, hidden, feature and attention width.
    pub width: usize,

    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub images_per_batch: usize,
    pub batch_sentences_per_image: usize,
    pub dropout: f64,
    pub freeze_encoder_epochs: usize,
    pub eval_every: usize,
    pub grad_clip: f64,
    pub eval_beam_width: usize,
    pub lm_epochs: usize,
    pub lm_learning_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_from: Option<PathBuf>,

    pub beam_width: usize,
    pub beta: f64,
    /// Defaults to 11 for GOOD and 16 for TIP when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_zero_after_step: Option<usize>,
    pub max_length: usize,
    pub filter: bool,
    pub length_normalize: bool,

    pub sweep_betas: Vec<f64>,
    pub sweep_beams: Vec<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            threads: 1,
            data_dir: "data".into(),
            run_dir: "runs".into(),
            feedback_type: synth.feedback_type,
            grid_height: synth.grid_height,
            grid_width: synth.grid_width,
            grid_depth: synth.grid_depth,
            num_train_images: synth.num_train_images,
            num_eval_images: synth.num_eval_images,
            sentences_per_image: synth.sentences_per_image,
            refs_per_eval_image: synth.refs_per_eval_image,
            generic_rate: synth.generic_rate,
            signal_scale: synth.signal_scale,
            noise_std: synth.noise_std,
            min_count: DEFAULT_MIN_COUNT_EXCLUSIVE,
            model: ModelKind::TopDown,
            width: 32,
            learning_rate: train.learning_rate,
            adam_beta1: train.beta1,
            adam_beta2: train.beta2,
            adam_epsilon: train.epsilon,
            epochs: train.epochs,
            images_per_batch: train.images_per_batch,
            batch_sentences_per_image: train.sentences_per_image,
            dropout: train.dropout,
            freeze_encoder_epochs: train.freeze_encoder_epochs,
            eval_every: train.eval_every,
            grad_clip: train.grad_clip,
            eval_beam_width: train.eval_beam_width,
            lm_epochs: 10,
            lm_learning_rate: train.learning_rate,
            transfer_from: None,
            beam_width: 10,
            beta: 0.4,
            beta_zero_after_step: None,
            max_length: DEFAULT_MAX_LENGTH,
            filter: true,
            length_normalize: false,
            sweep_betas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            sweep_beams: vec![1, 3, 5, 10],
        }
    }
}

impl Settings {
    /// Defaults, overlaid with `file` (if any), overlaid with `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table = toml::Table::try_from(Settings::default()).context("serializing defaults")?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let doc: toml::Table =
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            for (k, v) in doc {
                if v.is_table() {
                    bail!("{}: key {k:?} is a table; the config is flat", path.display());
                }
                table.insert(k, v);
            }
        }
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        let settings: Settings = table.try_into().map_err(|e: toml::de::Error| {
            let origin = file.map(|p| p.display().to_string()).unwrap_or_else(|| "flags".into());
            anyhow::anyhow!("invalid configuration ({origin}): {}", e.message())
        })?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate()?;
        self.train_config().validate()?;
        self.lm_train_config().validate()?;
        self.decoding().validate()?;
        if self.width == 0 {
            bail!("width must be at least 1");
        }
        if self.sweep_betas.is_empty() || self.sweep_beams.is_empty() {
            bail!("sweep_betas and sweep_beams must be non-empty");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            feedback_type: self.feedback_type,
            grid_height: self.grid_height,
            grid_width: self.grid_width,
            grid_depth: self.grid_depth,
            num_train_images: self.num_train_images,
            num_eval_images: self.num_eval_images,
            sentences_per_image: self.sentences_per_image,
            refs_per_eval_image: self.refs_per_eval_image,
            generic_rate: self.generic_rate,
            signal_scale: self.signal_scale,
            noise_std: self.noise_std,
            inventory: AttributeInventory::default(),
        }
    }

    pub fn dims(&self, vocab: usize) -> Dims {
        Dims::uniform(vocab, self.grid_depth, self.width)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            epochs: self.epochs,
            images_per_batch: self.images_per_batch,
            sentences_per_image: self.batch_sentences_per_image,
            dropout: self.dropout,
            freeze_encoder_epochs: self.freeze_encoder_epochs,
            eval_every: self.eval_every,
            grad_clip: self.grad_clip,
            eval_beam_width: self.eval_beam_width,
            eval_max_length: self.max_length,
            seed: self.seed,
            threads: self.threads,
        }
    }

    pub fn lm_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.lm_epochs,
            learning_rate: self.lm_learning_rate,
            freeze_encoder_epochs: 0,
            ..self.train_config()
        }
    }

    pub fn decoding(&self) -> DecodingConfig {
        DecodingConfig {
            beam_width: self.beam_width,
            beta: self.beta,
            beta_zero_after_step: self
                .beta_zero_after_step
                .unwrap_or_else(|| default_beta_cutoff(self.feedback_type)),
            max_length: self.max_length,
            filter_enabled: self.filter,
            feedback_type: self.feedback_type,
            length_normalize: self.length_normalize,
        }
    }
}

/// Parses `key=value`; the value is read as a TOML scalar or array and
/// falls back to a bare string (so `feedback_type=TIP` works unquoted).
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let Some((k, v)) = s.split_once('=') else {
        bail!("override {s:?} is not key=value");
    };
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        bail!("override {s:?} has an empty key");
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(v.to_owned()),
    };
    Ok((k.to_owned(), value))
}
