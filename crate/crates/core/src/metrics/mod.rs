//! Captioning metrics (BLEU-4, ROUGE-L, CIDEr-D), corpus diversity and
//! vocabulary usage, the leave-one-out reference baseline and the
//! β × beam-width sweep.

mod bleu;
mod cider;
mod ngrams;
mod rouge;
mod sweep;

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EvalSet, Vocabulary};
use crate::{Error, Result};

pub use bleu::{bleu4, BLEU_ZERO_PRECISION};
pub use cider::{cider_d, CiderD};
pub use rouge::{rouge_l, ROUGE_BETA};
pub use sweep::{sweep, write_report, write_sweep_csv, SweepRow, SWEEP_HEADER};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    pub diversity: f64,
    pub vocab_usage: f64,
}

pub(crate) fn check_inputs(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    min_refs: usize,
) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Metric("no candidate sentences".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Metric(format!(
            "{} candidates for {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(|r| r.len() < min_refs) {
        return Err(Error::Metric(format!(
            "image {i} has {} references, need {min_refs}",
            references[i].len()
        )));
    }
    Ok(())
}

/// Share of distinct sentences among the generated ones (one per image).
pub fn diversity(generated: &[Vec<String>]) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::Metric("diversity of an empty corpus".into()));
    }
    let distinct: HashSet<&[String]> = generated.iter().map(|s| s.as_slice()).collect();
    Ok(distinct.len() as f64 / generated.len() as f64)
}

/// Share of vocabulary words (specials excluded) used at least once.
pub fn vocab_usage(generated: &[Vec<String>], vocab: &Vocabulary) -> Result<f64> {
    if vocab.num_words() == 0 {
        return Err(Error::Metric("vocabulary has no words".into()));
    }
    let used: HashSet<usize> = generated
        .iter()
        .flatten()
        .filter_map(|t| vocab.id(t))
        .filter(|&id| !vocab.is_special(id))
        .collect();
    Ok(used.len() as f64 / vocab.num_words() as f64)
}

/// All five metrics for one generated corpus.
pub fn evaluate(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    vocab: &Vocabulary,
) -> Result<MetricsReport> {
    evaluate_with(candidates, references, vocab, &CiderD::new(references)?)
}

pub(crate) fn evaluate_with(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    vocab: &Vocabulary,
    cider: &CiderD<'_>,
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        bleu4: bleu4(candidates, references)?,
        rouge_l: rouge_l(candidates, references)?,
        cider_d: cider.score(candidates)?,
        diversity: diversity(candidates)?,
        vocab_usage: vocab_usage(candidates, vocab)?,
    })
}

/// Human reference point: for every image one reference, drawn uniformly
/// with `seed`, is scored against the remaining ones.
pub fn fs_baseline(eval: &EvalSet, seed: u64, vocab: &Vocabulary) -> Result<MetricsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = Vec::with_capacity(eval.len());
    let mut rest = Vec::with_capacity(eval.len());
    for e in eval.examples() {
        if e.sentences.len() < 2 {
            return Err(Error::Metric(format!("{} has fewer than 2 references", e.image_id)));
        }
        let k = rng.gen_range(0..e.sentences.len());
        candidates.push(e.sentences[k].clone());
        let mut others = e.sentences.clone();
        others.remove(k);
        rest.push(others);
    }
    evaluate(&candidates, &rest, vocab)
}
