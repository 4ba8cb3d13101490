//! The captioning networks and the auxiliary language model.
//!
//! Every model exposes two faces: graph-level functions used for training
//! and gradient checks, and the [`SequenceModel`] trait used by beam search,
//! which runs one step for a batch of hypotheses with frozen parameters.

mod fc;
mod layers;
mod lm;
mod topdown;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, TensorError, Var};
use crate::corpus::{FeatureGrid, Vocabulary};
use crate::{Error, Result};

pub use fc::{FcBaseline, FcVars};
pub use layers::{
    attend, attention_keys, lstm_cell, project_cells, Attention, AttentionVars, EncoderProjection, Lstm,
    LstmVars, INIT_SCALE,
};
pub use lm::{LanguageModel, LmVars};
pub use topdown::{attention_step, encode_features, ImageFeatures, TopDown, TopDownState, TopDownVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TopDown,
    Fc,
    Lm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::TopDown => "top_down",
            ModelKind::Fc => "fc",
            ModelKind::Lm => "lm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top_down" | "topdown" => Ok(ModelKind::TopDown),
            "fc" => Ok(ModelKind::Fc),
            "lm" => Ok(ModelKind::Lm),
            _ => Err(Error::Config(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Layer widths. The language model only uses `vocab`, `embed` and `hidden`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    /// Depth of the input feature grid.
    pub feature_in: usize,
    /// Width of the projected cell features `v_i`.
    pub feature: usize,
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
}

impl Dims {
    /// All internal widths set to `width`.
    pub fn uniform(vocab: usize, feature_in: usize, width: usize) -> Self {
        Self {
            vocab,
            feature_in,
            feature: width,
            embed: width,
            hidden: width,
            attention: width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.vocab, self.feature_in, self.feature, self.embed, self.hidden, self.attention];
        if all.contains(&0) {
            return Err(Error::Config(format!("model widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Recurrent vectors of one hypothesis (one entry per layer vector, e.g.
/// `h1, c1, h2, c2` for the two-layer decoder).
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState(pub Vec<Vec<f64>>);

/// Per-image tensors a model caches before stepping (empty for the
/// language model).
#[derive(Clone, Debug, Default)]
pub struct Context(pub(crate) Vec<Tensor>);

/// Step-at-a-time inference interface shared by the captioners and the LM.
pub trait SequenceModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Per-image context and the state in which the first word (after the
    /// begin token) is predicted. Unconditioned models ignore `grid`.
    fn start(&self, grid: Option<&FeatureGrid>) -> Result<(Context, RecurrentState)>;

    /// Advances every state by feeding `prev[i]` to `states[i]`; returns the
    /// next-word log-probabilities and the new states.
    fn step(
        &self,
        ctx: &Context,
        states: &[&RecurrentState],
        prev: &[usize],
    ) -> Result<(Vec<Vec<f64>>, Vec<RecurrentState>)>;
}

/// Dropout masks for one decoder step; `None` disables that site.
#[derive(Clone, Debug, Default)]
pub struct StepMasks {
    /// `[B, E]`, applied to the word embedding.
    pub embed: Option<Tensor>,
    /// `[B, H]`, applied to the top hidden state before the output layer.
    pub output: Option<Tensor>,
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Self { rate, rng })
    }

    pub fn mask(&mut self, rows: usize, cols: usize) -> Option<Tensor> {
        if self.rate == 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        let data = (0..rows * cols)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        Some(Tensor::new(vec![rows, cols], data).expect("mask shape"))
    }

    pub fn step_masks(&mut self, batch: usize, embed: usize, hidden: usize) -> StepMasks {
        StepMasks {
            embed: self.mask(batch, embed),
            output: self.mask(batch, hidden),
        }
    }
}

/// A teacher-forcing batch: framed sentences, each paired with its image
/// (unconditioned models take an empty `grids`).
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub grids: Vec<&'a FeatureGrid>,
    pub sentences: Vec<&'a [usize]>,
}

impl Batch<'_> {
    pub fn num_targets(&self) -> usize {
        self.sentences.iter().map(|s| s.len().saturating_sub(1)).sum()
    }
}

/// Result of recording a teacher-forced batch on a tape.
pub struct TeacherForced {
    /// Sum of `log p(w_t | w_<t, ·)` over every non-padding target.
    pub logp_sum: Var,
    pub num_targets: usize,
    /// One variable per parameter, in [`Trainable::parameters`] order.
    pub params: Vec<Var>,
}

/// Models the training loop can optimize and checkpoint.
pub trait Trainable: SequenceModel {
    fn kind(&self) -> ModelKind;

    fn dims(&self) -> Dims;

    /// Named parameter tensors in a fixed order.
    fn parameters(&self) -> Vec<(&'static str, &Tensor)>;

    fn parameters_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;

    /// Records the teacher-forced forward pass. With `freeze_encoder` the
    /// encoder projection enters the tape as constants, so it receives no
    /// gradient.
    fn teacher_forced<'p>(
        &'p self,
        g: &mut Graph<'p>,
        batch: &Batch<'_>,
        dropout: Option<&mut Dropout>,
        freeze_encoder: bool,
    ) -> Result<TeacherForced>;
}

/// True for the encoder projection tensors shared by both captioners.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("proj.")
}

/// Fresh model of the requested kind.
pub fn build_model(kind: ModelKind, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Box<dyn Trainable>> {
    dims.validate()?;
    Ok(match kind {
        ModelKind::TopDown => Box::new(TopDown::new(dims, rng)),
        ModelKind::Fc => Box::new(FcBaseline::new(dims, rng)),
        ModelKind::Lm => Box::new(LanguageModel::new(dims, rng)),
    })
}

pub(crate) fn bind_params<'p>(
    g: &mut Graph<'p>,
    params: Vec<(&'static str, &'p Tensor)>,
    freeze_encoder: bool,
) -> Vec<Var> {
    params
        .into_iter()
        .map(|(name, t)| {
            if freeze_encoder && is_encoder_param(name) {
                g.constant_ref(t)
            } else {
                g.param(t)
            }
        })
        .collect()
}

pub(crate) fn bind_constants<'p>(g: &mut Graph<'p>, params: Vec<(&'static str, &'p Tensor)>) -> Vec<Var> {
    params.into_iter().map(|(_, t)| g.constant_ref(t)).collect()
}

/// Runs teacher forcing with a model-specific step function. Shorter
/// sentences are padded; padded positions are excluded by a zero mask.
pub(crate) fn teacher_forced_sum<F>(
    g: &mut Graph,
    sentences: &[&[usize]],
    mut step: F,
) -> Result<(Var, usize), TensorError>
where
    F: FnMut(&mut Graph, &[usize]) -> Result<Var, TensorError>,
{
    let max_len = sentences.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut total: Option<Var> = None;
    let mut count = 0;
    for t in 0..max_len.saturating_sub(1) {
        let prev: Vec<usize> = sentences.iter().map(|s| s.get(t).copied().unwrap_or(Vocabulary::BOS)).collect();
        let logp = step(g, &prev)?;
        let mut targets = Vec::with_capacity(sentences.len());
        let mut mask = Vec::with_capacity(sentences.len());
        for s in sentences {
            match s.get(t + 1) {
                Some(&w) => {
                    targets.push(w);
                    mask.push(1.0);
                    count += 1;
                }
                None => {
                    targets.push(Vocabulary::BOS);
                    mask.push(0.0);
                }
            }
        }
        let picked = g.gather(logp, &targets)?;
        let mask = g.constant(Tensor::vector(mask));
        let masked = g.mul(picked, mask)?;
        let s = g.sum(masked)?;
        total = Some(match total {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    let total = match total {
        Some(v) => v,
        None => g.constant(Tensor::scalar(0.0)),
    };
    Ok((total, count))
}

pub(crate) fn check_batch(batch: &Batch<'_>, vocab: usize, needs_grids: bool) -> Result<()> {
    if batch.sentences.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if needs_grids && batch.grids.len() != batch.sentences.len() {
        return Err(Error::Dimension(format!(
            "{} grids for {} sentences",
            batch.grids.len(),
            batch.sentences.len()
        )));
    }
    for s in &batch.sentences {
        if s.len() < 2 {
            return Err(Error::SentenceTooShort(s.len()));
        }
        if let Some(&id) = s.iter().find(|&&id| id >= vocab) {
            return Err(Error::TokenOutOfRange { id, size: vocab });
        }
    }
    Ok(())
}

pub(crate) fn check_ids(ids: &[usize], vocab: usize) -> Result<()> {
    match ids.iter().find(|&&id| id >= vocab) {
        Some(&id) => Err(Error::TokenOutOfRange { id, size: vocab }),
        None => Ok(()),
    }
}

/// `[cells of every grid]` as one `[B·N, D]` tensor.
pub(crate) fn stack_grids(grids: &[&FeatureGrid], depth: usize) -> Result<(Tensor, usize)> {
    let n = grids[0].num_cells();
    let mut data = Vec::with_capacity(grids.len() * n * depth);
    for grid in grids {
        if grid.depth() != depth || grid.num_cells() != n {
            return Err(Error::Dimension(format!(
                "grid {}x{}x{} does not match {} cells of depth {depth}",
                grid.height(),
                grid.width(),
                grid.depth(),
                n
            )));
        }
        data.extend(grid.values().iter().map(|&v| v as f64));
    }
    Ok((Tensor::new(vec![grids.len() * n, depth], data)?, n))
}

/// Teacher-forced `Σ_{t=1..T} log p(w_t | w_<t, ·)` computed by stepping the
/// model one token at a time. The begin token is conditioned on, never
/// scored; the end token is scored.
pub fn sequence_log_prob(model: &dyn SequenceModel, grid: Option<&FeatureGrid>, s: &[usize]) -> Result<f64> {
    if s.len() < 2 {
        return Err(Error::SentenceTooShort(s.len()));
    }
    check_ids(s, model.vocab_size())?;
    let (ctx, mut state) = model.start(grid)?;
    let mut total = 0.0;
    for t in 0..s.len() - 1 {
        let (logp, mut next) = model.step(&ctx, &[&state], &[s[t]])?;
        total += logp[0][s[t + 1]];
        state = next.pop().expect("one state per input");
    }
    Ok(total)
}

/// `log p(s | I)` under a captioner.
pub fn sentence_log_prob_given_image(s: &[usize], grid: &FeatureGrid, captioner: &dyn SequenceModel) -> Result<f64> {
    sequence_log_prob(captioner, Some(grid), s)
}

/// `log p(s)` under the language model.
pub fn lm_sentence_log_prob(s: &[usize], lm: &LanguageModel) -> Result<f64> {
    sequence_log_prob(lm, None, s)
}

/// Stacks the `i`-th vector of every state into a `[B, W]` tensor.
pub(crate) fn stack_state(states: &[&RecurrentState], i: usize) -> Tensor {
    let rows: Vec<&[f64]> = states.iter().map(|s| s.0[i].as_slice()).collect();
    layers::stack_rows(&rows)
}

/// Splits `[B, W]` tensors back into per-row states.
pub(crate) fn unstack_states(parts: &[&Tensor]) -> Vec<RecurrentState> {
    let b = parts[0].rows();
    (0..b)
        .map(|r| RecurrentState(parts.iter().map(|t| t.row(r).to_vec()).collect()))
        .collect()
}

pub(crate) fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub(crate) fn check_step_inputs(states: &[&RecurrentState], prev: &[usize], vocab: usize, width: usize) -> Result<()> {
    if states.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if states.len() != prev.len() {
        return Err(Error::Dimension(format!("{} states for {} tokens", states.len(), prev.len())));
    }
    if states.iter().any(|s| s.0.len() != width) {
        return Err(Error::Dimension(format!("expected {width} recurrent vectors per state")));
    }
    check_ids(prev, vocab)
}

#[cfg(test)]
mod tests;
