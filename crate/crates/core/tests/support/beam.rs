//! Exhaustive-width beam search against brute-force enumeration, with the
//! real top-down decoder and language model on a tiny vocabulary.

#![allow(dead_code)]

use mmicap::corpus::{FeatureGrid, FeedbackType, Vocabulary};
use mmicap::decoding::{beam_search, hypothesis_score, DecodingConfig};
use mmicap::models::{Dims, LanguageModel, SequenceModel, TopDown, Trainable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Begin token plus three emittable tokens (end, unknown, one word).
pub const VOCAB: usize = 4;
pub const MAX_LENGTH: usize = 3;
pub const CUTOFF: usize = 2;

fn dims() -> Dims {
    Dims {
        vocab: VOCAB,
        feature_in: 3,
        feature: 4,
        embed: 3,
        hidden: 4,
        attention: 3,
    }
}

/// Overwrites every parameter entry with a fixed trigonometric pattern so
/// the distributions are far from uniform.
fn hand_set(model: &mut dyn Trainable, phase: f64) {
    for (k, (_, t)) in model.parameters_mut().into_iter().enumerate() {
        for (i, x) in t.data_mut().iter_mut().enumerate() {
            *x = 1.5 * (0.7 * i as f64 + 1.3 * k as f64 + phase).sin();
        }
    }
}

pub fn models() -> (TopDown, LanguageModel, FeatureGrid) {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let mut cap = TopDown::new(dims(), &mut r);
    let mut lm = LanguageModel::new(dims(), &mut r);
    hand_set(&mut cap, 0.0);
    hand_set(&mut lm, 2.0);
    let grid = FeatureGrid::new(2, 2, 3, (0..12).map(|i| ((i as f32) * 0.37).cos()).collect()).unwrap();
    (cap, lm, grid)
}

pub fn config(beta: f64) -> DecodingConfig {
    DecodingConfig {
        beam_width: 27,
        beta,
        beta_zero_after_step: CUTOFF,
        max_length: MAX_LENGTH,
        filter_enabled: false,
        feedback_type: FeedbackType::Good,
        length_normalize: false,
    }
}

/// Next-token distribution after feeding `prefix`, one token at a time.
fn next_logp(m: &dyn SequenceModel, grid: Option<&FeatureGrid>, prefix: &[usize]) -> Vec<f64> {
    let (ctx, mut st) = m.start(grid).unwrap();
    let mut out = vec![];
    for &p in prefix {
        let (lp, mut n) = m.step(&ctx, &[&st], &[p]).unwrap();
        out = lp.into_iter().next().unwrap();
        st = n.pop().unwrap();
    }
    out
}

/// Best end-terminated sentence of at most `MAX_LENGTH` generated tokens
/// and its MMI score, by listing them all.
pub fn enumerate(cap: &TopDown, lm: &LanguageModel, grid: &FeatureGrid, beta: f64) -> (Vec<usize>, f64) {
    let mut all: Vec<Vec<usize>> = vec![];
    let mut frontier = vec![vec![Vocabulary::BOS]];
    for _ in 0..MAX_LENGTH {
        let mut next = vec![];
        for p in &frontier {
            for w in 1..VOCAB {
                let mut s = p.clone();
                s.push(w);
                if w == Vocabulary::EOS {
                    all.push(s);
                } else {
                    next.push(s);
                }
            }
        }
        frontier = next;
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for s in all {
        let mut score = 0.0;
        for t in 1..s.len() {
            let weight = if t <= CUTOFF { beta } else { 0.0 };
            score += next_logp(cap, Some(grid), &s[..t])[s[t]] - weight * next_logp(lm, None, &s[..t])[s[t]];
        }
        if best.as_ref().is_none_or(|(_, b)| score > *b) {
            best = Some((s, score));
        }
    }
    best.unwrap()
}

/// `(β, tokens agree, |score difference|)` for each β.
pub fn exactness(betas: &[f64]) -> Vec<(f64, bool, f64)> {
    let (cap, lm, grid) = models();
    betas
        .iter()
        .map(|&beta| {
            let c = config(beta);
            let (want, want_score) = enumerate(&cap, &lm, &grid, beta);
            let r = beam_search(Some(&grid), &cap, Some(&lm), &c).unwrap();
            let top = &r.hypotheses[0];
            (beta, top.tokens == want, (hypothesis_score(top, &c) - want_score).abs())
        })
        .collect()
}
