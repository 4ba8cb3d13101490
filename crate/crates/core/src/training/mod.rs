//! ADAM, teacher-forcing training loops with model selection, and the
//! checkpoint format.

mod checkpoint;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::corpus::{Corpus, EvalSet, FeatureGrid, Vocabulary};
use crate::decoding::{decode_all, DecodingConfig, DEFAULT_MAX_LENGTH};
use crate::metrics::CiderD;
use crate::models::{is_encoder_param, Batch, Dropout, ModelKind, Trainable};
use crate::{Error, Result};

pub use checkpoint::{
    load_parameters, transfer_encoder_weights, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

/// RNG streams derived from the single run seed.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_BATCHES: u64 = 1;
pub const STREAM_DROPOUT: u64 = 2;

/// Independent ChaCha stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub images_per_batch: usize,
    /// Sentences drawn per image per epoch (with replacement when an image
    /// has fewer).
    pub sentences_per_image: usize,
    pub dropout: f64,
    /// The encoder projection stays fixed for this many epochs.
    pub freeze_encoder_epochs: usize,
    pub eval_every: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub eval_beam_width: usize,
    pub eval_max_length: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 20,
            images_per_batch: 32,
            sentences_per_image: 3,
            dropout: 0.5,
            freeze_encoder_epochs: 10,
            eval_every: 1,
            grad_clip: 5.0,
            eval_beam_width: 10,
            eval_max_length: DEFAULT_MAX_LENGTH,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("ADAM betas must lie in [0, 1)".into());
        }
        if self.epsilon <= 0.0 {
            return bad("epsilon must be positive".into());
        }
        if self.images_per_batch == 0 || self.sentences_per_image == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.eval_every == 0 || self.eval_beam_width == 0 || self.eval_max_length == 0 {
            return bad("eval_every, eval_beam_width and eval_max_length must be at least 1".into());
        }
        if self.grad_clip < 0.0 {
            return bad("grad_clip must be non-negative".into());
        }
        Ok(())
    }

    fn as_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// ADAM with bias correction. Parameters whose gradient is `None` are
/// frozen: neither they nor their moments change.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[(&str, &Tensor)], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn from_config(params: &[(&str, &Tensor)], c: &TrainConfig) -> Self {
        Self::new(params, c.learning_rate, c.beta1, c.beta2, c.epsilon)
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update. Every gradient is checked before anything is written, so
    /// a non-finite gradient leaves the parameters untouched.
    pub fn step(&mut self, params: Vec<(&'static str, &mut Tensor)>, grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::Dimension(format!(
                        "gradient for {name} has shape {:?}, parameter {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient((*name).to_owned()));
                }
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, ((_, p), g)) in params.into_iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Mean per-token negative log-likelihood and its gradient for every
/// parameter (`None` for frozen encoder tensors).
pub fn loss_and_gradients(
    model: &dyn Trainable,
    batch: &Batch<'_>,
    dropout: Option<&mut Dropout>,
    freeze_encoder: bool,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut g = Graph::new();
    let tf = model.teacher_forced(&mut g, batch, dropout, freeze_encoder)?;
    if tf.num_targets == 0 {
        return Err(Error::EmptyBatch);
    }
    let loss = g.scale(tf.logp_sum, -1.0 / tf.num_targets as f64)?;
    let value = g.scalar(loss);
    let mut grads = g.backward(loss)?;
    let out = model
        .parameters()
        .into_iter()
        .zip(&tf.params)
        .map(|((name, t), &v)| {
            if freeze_encoder && is_encoder_param(name) {
                None
            } else {
                Some(grads.take_or_zeros(v, t))
            }
        })
        .collect();
    Ok((value, out))
}

/// Mean per-token negative log-likelihood without dropout.
pub fn teacher_forcing_loss(model: &dyn Trainable, batch: &Batch<'_>) -> Result<f64> {
    let mut g = Graph::new();
    let tf = model.teacher_forced(&mut g, batch, None, false)?;
    if tf.num_targets == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(-g.scalar(tf.logp_sum) / tf.num_targets as f64)
}

/// `exp` of the mean per-token negative log-likelihood of `sentences`
/// (end token included, begin token excluded). `grids` pairs one image with
/// each sentence and must be empty for the language model.
pub fn perplexity(model: &dyn Trainable, grids: &[&FeatureGrid], sentences: &[&[usize]]) -> Result<f64> {
    const CHUNK: usize = 256;
    if sentences.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (mut nll, mut count) = (0.0, 0usize);
    for (i, chunk) in sentences.chunks(CHUNK).enumerate() {
        let batch = Batch {
            grids: if grids.is_empty() {
                vec![]
            } else {
                grids[i * CHUNK..i * CHUNK + chunk.len()].to_vec()
            },
            sentences: chunk.to_vec(),
        };
        let mut g = Graph::new();
        let tf = model.teacher_forced(&mut g, &batch, None, false)?;
        nll -= g.scalar(tf.logp_sum);
        count += tf.num_targets;
    }
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok((nll / count as f64).exp())
}

/// One row of the per-epoch training log. Epoch 0 is the untrained model.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    /// Selection metric on held-out data (CIDEr-D or perplexity).
    pub eval_metric: Option<f64>,
    pub wall_seconds: f64,
}

pub struct TrainOutcome {
    /// The selected model; the trained model is also reset to it.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Writes the epoch log as CSV; `metric` names the third column.
pub fn write_epoch_log(path: &Path, log: &[EpochLog], metric: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,{metric},wall_seconds")?;
        for r in log {
            writeln!(
                out,
                "{},{},{},{:.3}",
                r.epoch,
                opt(r.train_loss),
                opt(r.eval_metric),
                r.wall_seconds
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// `(image, sentence)` index pairs for every batch of one epoch.
fn epoch_batches(counts: &[usize], c: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, usize)>> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.shuffle(rng);
    order
        .chunks(c.images_per_batch)
        .map(|imgs| {
            let mut pairs = Vec::with_capacity(imgs.len() * c.sentences_per_image);
            for &i in imgs {
                let n = counts[i];
                if n >= c.sentences_per_image {
                    let picked = rand::seq::index::sample(rng, n, c.sentences_per_image);
                    pairs.extend(picked.into_iter().map(|s| (i, s)));
                } else {
                    pairs.extend((0..c.sentences_per_image).map(|_| (i, rng.gen_range(0..n))));
                }
            }
            pairs
        })
        .collect()
}

/// Snapshot of the current parameters as `(name, tensor)` pairs.
fn snapshot(model: &dyn Trainable) -> Vec<(String, Tensor)> {
    model
        .parameters()
        .into_iter()
        .map(|(n, t)| (n.to_owned(), t.clone()))
        .collect()
}

/// Selection pass: decodes the eval set with the conditional
/// objective and scores it with CIDEr-D.
pub fn eval_cider_d(model: &dyn Trainable, eval: &EvalSet, vocab: &Vocabulary, c: &TrainConfig) -> Result<f64> {
    let refs = eval.references();
    let cider = CiderD::new(&refs)?;
    let grids: Vec<&FeatureGrid> = eval.examples().iter().map(|e| &e.grid).collect();
    let feedback_type = eval
        .examples()
        .first()
        .map(|e| e.feedback_type)
        .ok_or_else(|| Error::Config("empty eval set".into()))?;
    let cfg = DecodingConfig {
        beam_width: c.eval_beam_width,
        beta: 0.0,
        max_length: c.eval_max_length,
        filter_enabled: false,
        ..DecodingConfig::for_type(feedback_type)
    };
    let decoded = decode_all(&grids, model, None, &cfg, vocab, c.threads)?;
    let sentences: Vec<Vec<String>> = decoded.into_iter().map(|d| d.sentence).collect();
    cider.score(&sentences)
}

/// Trains a captioner on `train` with teacher forcing and keeps the epoch
/// (0 included) with the highest eval CIDEr-D; earlier epochs win ties.
pub fn train_captioner(
    model: &mut dyn Trainable,
    train: &Corpus,
    eval: &EvalSet,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_captioner_with(model, train, eval, vocab, config, |_| {})
}

/// [`train_captioner`] with a callback invoked after every epoch.
pub fn train_captioner_with(
    model: &mut dyn Trainable,
    train: &Corpus,
    eval: &EvalSet,
    vocab: &Vocabulary,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.kind() == ModelKind::Lm {
        return Err(Error::Config("train_captioner needs an image-conditioned model".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    train.validate()?;
    let encoded = train.encode(vocab);
    let counts: Vec<usize> = encoded.iter().map(|e| e.sentences.len()).collect();
    let mut batch_rng = stream_rng(config.seed, STREAM_BATCHES);
    let mut dropout = Dropout::new(config.dropout, stream_rng(config.seed, STREAM_DROPOUT))?;
    let mut adam = Adam::from_config(&model.parameters(), config);
    let start = Instant::now();

    let score = eval_cider_d(model, eval, vocab, config)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: None,
        eval_metric: Some(score),
        wall_seconds: start.elapsed().as_secs_f64(),
    }];
    on_epoch(&log[0]);
    let (mut best_epoch, mut best_score, mut best) = (0, score, snapshot(model));

    for epoch in 1..=config.epochs {
        let freeze = epoch <= config.freeze_encoder_epochs;
        let (mut loss_sum, mut loss_tokens) = (0.0, 0usize);
        for pairs in epoch_batches(&counts, config, &mut batch_rng) {
            let batch = Batch {
                grids: pairs.iter().map(|&(i, _)| &train.examples[i].grid).collect(),
                sentences: pairs.iter().map(|&(i, s)| encoded[i].sentences[s].as_slice()).collect(),
            };
            let (loss, mut grads) = loss_and_gradients(model, &batch, Some(&mut dropout), freeze)?;
            clip_gradients(&mut grads, config.grad_clip);
            adam.step(model.parameters_mut(), &grads)?;
            let n = batch.num_targets();
            loss_sum += loss * n as f64;
            loss_tokens += n;
        }
        let evaluate = epoch % config.eval_every == 0 || epoch == config.epochs;
        let eval_metric = if evaluate {
            Some(eval_cider_d(model, eval, vocab, config)?)
        } else {
            None
        };
        if let Some(s) = eval_metric {
            if s > best_score {
                (best_epoch, best_score, best) = (epoch, s, snapshot(model));
            }
        }
        log.push(EpochLog {
            epoch,
            train_loss: Some(loss_sum / loss_tokens as f64),
            eval_metric,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        on_epoch(log.last().unwrap());
    }

    load_parameters(model, &best)?;
    let mut checkpoint = Checkpoint::from_model(model, &vocab.hash(), config.as_json(), best_epoch);
    checkpoint.best_cider_d = Some(best_score);
    Ok(TrainOutcome { checkpoint, log })
}

/// Trains the auxiliary language model on framed sentences and keeps the
/// epoch with the lowest held-out perplexity.
pub fn train_lm(
    model: &mut dyn Trainable,
    train: &[Vec<usize>],
    heldout: &[Vec<usize>],
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_lm_with(model, train, heldout, vocab, config, |_| {})
}

pub fn train_lm_with(
    model: &mut dyn Trainable,
    train: &[Vec<usize>],
    heldout: &[Vec<usize>],
    vocab: &Vocabulary,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.kind() != ModelKind::Lm {
        return Err(Error::Config("train_lm needs a language model".into()));
    }
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let held: Vec<&[usize]> = heldout.iter().map(Vec::as_slice).collect();
    let batch_size = config.images_per_batch * config.sentences_per_image;
    let mut batch_rng = stream_rng(config.seed, STREAM_BATCHES);
    let mut dropout = Dropout::new(config.dropout, stream_rng(config.seed, STREAM_DROPOUT))?;
    let mut adam = Adam::from_config(&model.parameters(), config);
    let start = Instant::now();

    let ppl = perplexity(model, &[], &held)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: None,
        eval_metric: Some(ppl),
        wall_seconds: start.elapsed().as_secs_f64(),
    }];
    on_epoch(&log[0]);
    let (mut best_epoch, mut best_ppl, mut best) = (0, ppl, snapshot(model));

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut batch_rng);
        let (mut loss_sum, mut loss_tokens) = (0.0, 0usize);
        for idx in order.chunks(batch_size) {
            let batch = Batch {
                grids: vec![],
                sentences: idx.iter().map(|&i| train[i].as_slice()).collect(),
            };
            let (loss, mut grads) = loss_and_gradients(model, &batch, Some(&mut dropout), false)?;
            clip_gradients(&mut grads, config.grad_clip);
            adam.step(model.parameters_mut(), &grads)?;
            let n = batch.num_targets();
            loss_sum += loss * n as f64;
            loss_tokens += n;
        }
        let evaluate = epoch % config.eval_every == 0 || epoch == config.epochs;
        let eval_metric = if evaluate { Some(perplexity(model, &[], &held)?) } else { None };
        if let Some(p) = eval_metric {
            if p < best_ppl {
                (best_epoch, best_ppl, best) = (epoch, p, snapshot(model));
            }
        }
        log.push(EpochLog {
            epoch,
            train_loss: Some(loss_sum / loss_tokens as f64),
            eval_metric,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        on_epoch(log.last().unwrap());
    }

    load_parameters(model, &best)?;
    let mut checkpoint = Checkpoint::from_model(model, &vocab.hash(), config.as_json(), best_epoch);
    checkpoint.best_perplexity = Some(best_ppl);
    Ok(TrainOutcome { checkpoint, log })
}
