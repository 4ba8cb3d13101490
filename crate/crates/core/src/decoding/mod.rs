//! Beam search under the conditional objective `log p(s | I)` and the
//! mutual-information objective `log p(s | I) − β·log p(s)`, with the
//! anti-LM weight switched off after the first `G` generated words.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureGrid, FeedbackType, Vocabulary};
use crate::filter::validate_sentence;
use crate::models::{Context, RecurrentState, SequenceModel};
use crate::{Error, Result};

/// Default decode length cap (generated tokens, end token included).
pub const DEFAULT_MAX_LENGTH: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub beam_width: usize,
    pub beta: f64,
    /// Last step (1-based) at which `beta` applies.
    pub beta_zero_after_step: usize,
    pub max_length: usize,
    pub filter_enabled: bool,
    pub feedback_type: FeedbackType,
    /// Rank by score per generated token instead of the raw sum.
    pub length_normalize: bool,
}

impl DecodingConfig {
    pub fn for_type(feedback_type: FeedbackType) -> Self {
        Self {
            beam_width: 10,
            beta: 0.4,
            beta_zero_after_step: default_beta_cutoff(feedback_type),
            max_length: DEFAULT_MAX_LENGTH,
            filter_enabled: true,
            feedback_type,
            length_normalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if self.beta_zero_after_step == 0 {
            return Err(Error::Config("beta_zero_after_step must be at least 1".into()));
        }
        if self.max_length == 0 {
            return Err(Error::Config("max_length must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self::for_type(FeedbackType::Good)
    }
}

/// 11 steps for GOOD feedback, 16 for TIP.
pub fn default_beta_cutoff(t: FeedbackType) -> usize {
    match t {
        FeedbackType::Good => 11,
        FeedbackType::Tip => 16,
    }
}

/// `β_t`: the anti-LM weight at generated step `t` (1-based).
pub fn mmi_step_weight(t: usize, config: &DecodingConfig) -> f64 {
    if t <= config.beta_zero_after_step {
        config.beta
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct Hypothesis {
    /// Begin-framed token ids; ends with the end token when finished.
    pub tokens: Vec<usize>,
    /// `Σ_t log p(w_t | w_<t, I)`
    pub logp_cond: f64,
    /// `Σ_t log p(w_t | w_<t)` under the language model (0 without one).
    pub logp_prior: f64,
    /// `Σ_t β_t·log p(w_t | w_<t)`
    pub weighted_prior: f64,
    pub finished: bool,
    state: RecurrentState,
    lm_state: Option<RecurrentState>,
}

impl Hypothesis {
    /// Number of generated tokens (begin token excluded).
    pub fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Generated words without the begin/end framing.
    pub fn words(&self) -> &[usize] {
        let end = if self.finished { self.tokens.len() - 1 } else { self.tokens.len() };
        &self.tokens[1..end]
    }
}

/// `Σ_t [log p(w_t | w_<t, I) − β_t·log p(w_t | w_<t)]`, optionally divided
/// by the number of generated tokens.
pub fn hypothesis_score(h: &Hypothesis, config: &DecodingConfig) -> f64 {
    let s = h.logp_cond - h.weighted_prior;
    if config.length_normalize && h.generated() > 0 {
        s / h.generated() as f64
    } else {
        s
    }
}

#[derive(Clone, Debug)]
pub struct BeamResult {
    /// Ranked best first. Finished hypotheses only, unless none finished.
    pub hypotheses: Vec<Hypothesis>,
    /// True when nothing finished within `max_length` and the best
    /// unfinished hypothesis is returned instead.
    pub unfinished: bool,
}

fn rank(a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

struct Candidate {
    key: (f64, Vec<usize>),
    parent: usize,
    word: usize,
    cond: f64,
    prior: f64,
    weighted: f64,
}

/// Beam search. Every live hypothesis is expanded over every word except
/// the begin token; the `k` best candidates overall survive, and those that
/// end in the end token retire into the result pool. Search stops when the
/// pool holds `k` hypotheses, nothing is live, or `max_length` words have
/// been generated.
pub fn beam_search(
    grid: Option<&FeatureGrid>,
    captioner: &dyn SequenceModel,
    lm: Option<&dyn SequenceModel>,
    config: &DecodingConfig,
) -> Result<BeamResult> {
    config.validate()?;
    let vocab = captioner.vocab_size();
    if let Some(lm) = lm {
        if lm.vocab_size() != vocab {
            return Err(Error::Dimension(format!(
                "captioner vocabulary {vocab} differs from language model vocabulary {}",
                lm.vocab_size()
            )));
        }
    }
    let k = config.beam_width;
    let (ctx, state) = captioner.start(grid)?;
    let (lm_ctx, lm_state) = match lm {
        Some(m) => {
            let (c, s) = m.start(None)?;
            (c, Some(s))
        }
        None => (Context::default(), None),
    };
    let mut live = vec![Hypothesis {
        tokens: vec![Vocabulary::BOS],
        logp_cond: 0.0,
        logp_prior: 0.0,
        weighted_prior: 0.0,
        finished: false,
        state,
        lm_state,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();

    for t in 1..=config.max_length {
        let beta_t = mmi_step_weight(t, config);
        let prev: Vec<usize> = live.iter().map(|h| *h.tokens.last().unwrap()).collect();
        let states: Vec<&RecurrentState> = live.iter().map(|h| &h.state).collect();
        let (cond, next_states) = captioner.step(&ctx, &states, &prev)?;
        let (prior, next_lm) = match lm {
            Some(m) => {
                let s: Vec<&RecurrentState> = live.iter().map(|h| h.lm_state.as_ref().unwrap()).collect();
                let (p, ns) = m.step(&lm_ctx, &s, &prev)?;
                (Some(p), Some(ns))
            }
            None => (None, None),
        };

        let mut cands = Vec::with_capacity(live.len() * vocab);
        for (i, h) in live.iter().enumerate() {
            for w in 0..vocab {
                if w == Vocabulary::BOS {
                    continue;
                }
                let c = h.logp_cond + cond[i][w];
                let (p, wp) = match &prior {
                    Some(pr) => (h.logp_prior + pr[i][w], h.weighted_prior + beta_t * pr[i][w]),
                    None => (h.logp_prior, h.weighted_prior),
                };
                let mut score = c - wp;
                if config.length_normalize {
                    score /= t as f64;
                }
                let mut toks = h.tokens.clone();
                toks.push(w);
                cands.push(Candidate {
                    key: (score, toks),
                    parent: i,
                    word: w,
                    cond: c,
                    prior: p,
                    weighted: wp,
                });
            }
        }
        cands.sort_by(|a, b| rank(&a.key, &b.key));
        cands.truncate(k);

        let mut next_live = Vec::with_capacity(k);
        for c in cands {
            let finished = c.word == Vocabulary::EOS;
            let h = Hypothesis {
                tokens: c.key.1,
                logp_cond: c.cond,
                logp_prior: c.prior,
                weighted_prior: c.weighted,
                finished,
                state: next_states[c.parent].clone(),
                lm_state: next_lm.as_ref().map(|s| s[c.parent].clone()),
            };
            if finished {
                pool.push(h);
            } else {
                next_live.push(h);
            }
        }
        live = next_live;
        if pool.len() >= k || live.is_empty() {
            break;
        }
    }

    let unfinished = pool.is_empty();
    let mut out = if unfinished { live } else { pool };
    out.sort_by(|a, b| {
        rank(
            &(hypothesis_score(a, config), a.tokens.clone()),
            &(hypothesis_score(b, config), b.tokens.clone()),
        )
    });
    out.truncate(k);
    Ok(BeamResult {
        hypotheses: out,
        unfinished,
    })
}

/// Stepwise argmax under the conditional objective (lowest id on ties).
pub fn greedy(grid: Option<&FeatureGrid>, captioner: &dyn SequenceModel, max_length: usize) -> Result<Vec<usize>> {
    let (ctx, mut state) = captioner.start(grid)?;
    let mut prev = Vocabulary::BOS;
    let mut words = Vec::new();
    for _ in 0..max_length {
        let (lp, mut next) = captioner.step(&ctx, &[&state], &[prev])?;
        let best = (0..lp[0].len())
            .filter(|&w| w != Vocabulary::BOS)
            .fold(None, |acc: Option<usize>, w| match acc {
                Some(b) if lp[0][b] >= lp[0][w] => Some(b),
                _ => Some(w),
            })
            .expect("vocabulary has words");
        if best == Vocabulary::EOS {
            break;
        }
        words.push(best);
        prev = best;
        state = next.pop().unwrap();
    }
    Ok(words)
}

/// Final sentence for one image with its diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutcome {
    /// Word ids without framing.
    pub ids: Vec<usize>,
    pub sentence: Vec<String>,
    pub score: f64,
    pub logp_cond: f64,
    pub logp_prior: f64,
    pub beta: f64,
    /// Hypotheses ranked above the returned one that the filter rejected.
    pub filtered_count: usize,
    /// Every hypothesis failed the filter; the top one is returned anyway.
    pub filtered_fallback: bool,
    /// No hypothesis finished within `max_length`.
    pub unfinished: bool,
}

/// Beam search followed by the repetition filter: the best hypothesis that
/// passes is returned, or the overall best with `filtered_fallback` set.
pub fn decode_image(
    grid: Option<&FeatureGrid>,
    captioner: &dyn SequenceModel,
    lm: Option<&dyn SequenceModel>,
    config: &DecodingConfig,
    vocab: &Vocabulary,
) -> Result<DecodeOutcome> {
    let result = beam_search(grid, captioner, lm, config)?;
    let decoded: Vec<Vec<String>> = result
        .hypotheses
        .iter()
        .map(|h| vocab.decode(h.words()))
        .collect::<Result<_, _>>()?;
    let mut chosen = 0;
    let mut fallback = false;
    if config.filter_enabled {
        match decoded
            .iter()
            .position(|s| validate_sentence(s, config.feedback_type, vocab).valid)
        {
            Some(i) => chosen = i,
            None => fallback = true,
        }
    }
    let h = &result.hypotheses[chosen];
    Ok(DecodeOutcome {
        ids: h.words().to_vec(),
        sentence: decoded[chosen].clone(),
        score: hypothesis_score(h, config),
        logp_cond: h.logp_cond,
        logp_prior: h.logp_prior,
        beta: config.beta,
        filtered_count: if fallback { result.hypotheses.len() } else { chosen },
        filtered_fallback: fallback,
        unfinished: result.unfinished,
    })
}

/// Decodes every grid on `threads` worker threads; output order follows
/// the input order regardless of scheduling.
pub fn decode_all(
    grids: &[&FeatureGrid],
    captioner: &dyn SequenceModel,
    lm: Option<&dyn SequenceModel>,
    config: &DecodingConfig,
    vocab: &Vocabulary,
    threads: usize,
) -> Result<Vec<DecodeOutcome>> {
    let run = || {
        grids
            .par_iter()
            .map(|g| decode_image(Some(g), captioner, lm, config, vocab))
            .collect::<Result<Vec<_>>>()
    };
    if threads <= 1 {
        return grids
            .iter()
            .map(|g| decode_image(Some(g), captioner, lm, config, vocab))
            .collect();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(run)
}

/// One line of a decoded-sentences file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeRecord {
    pub image_id: String,
    pub sentence: String,
    pub score: f64,
    pub logp_cond: f64,
    pub logp_prior: f64,
    pub beta: f64,
    pub beam_width: usize,
    pub filtered_fallback: bool,
}

impl DecodeRecord {
    pub fn new(image_id: &str, outcome: &DecodeOutcome, config: &DecodingConfig) -> Self {
        Self {
            image_id: image_id.to_owned(),
            sentence: outcome.sentence.join(" "),
            score: outcome.score,
            logp_cond: outcome.logp_cond,
            logp_prior: outcome.logp_prior,
            beta: outcome.beta,
            beam_width: config.beam_width,
            filtered_fallback: outcome.filtered_fallback,
        }
    }
}

pub fn write_records(path: &Path, records: &[DecodeRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<DecodeRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Io {
                path: path.to_owned(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}
