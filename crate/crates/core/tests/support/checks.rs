//! Gradient checks for each network step and the attention invariants, as
//! plain functions so both the model tests and the acceptance run use them.

#![allow(dead_code)]

use mmicap::autodiff::{grad_check_report, GradCheckReport, Graph, Tensor, TensorError, Var};
use mmicap::models::{
    attend, attention_keys, attention_step, Attention, AttentionVars, Dims, FcBaseline, FcVars, ImageFeatures,
    LanguageModel, LmVars, StepMasks, TopDown, TopDownState, TopDownVars, Trainable,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

const VOCAB: usize = 9;
const FEATURE_IN: usize = 5;
const CELLS: usize = 4;
const BATCH: usize = 2;

pub fn width8() -> Dims {
    Dims::uniform(VOCAB, FEATURE_IN, 8)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Model parameters redrawn at a larger scale so every gradient entry is
/// well above finite-difference noise.
fn rescaled(model: &dyn Trainable, r: &mut ChaCha8Rng) -> Vec<Tensor> {
    model
        .parameters()
        .into_iter()
        .map(|(_, t)| Tensor::uniform(t.shape(), 0.5, r))
        .collect()
}

/// `Σ x ⊙ w` for a fixed random `w`: touches every output entry.
fn probe(g: &mut Graph, x: Var, r: &mut ChaCha8Rng) -> Result<Var, TensorError> {
    let shape = g.value(x).shape().to_vec();
    let w = g.constant(Tensor::uniform(&shape, 1.0, r));
    let xw = g.mul(x, w)?;
    g.sum(xw)
}

fn total(g: &mut Graph, parts: &[Var]) -> Result<Var, TensorError> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = g.add(acc, p)?;
    }
    Ok(acc)
}

/// One top-down decoder step from a random state, encoder included.
pub fn decoder_step_check(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let model = TopDown::new(width8(), &mut r);
    let mut params = rescaled(&model, &mut r);
    let h = model.dims().hidden;
    for _ in 0..4 {
        params.push(Tensor::uniform(&[BATCH, h], 0.5, &mut r));
    }
    params.push(Tensor::uniform(&[BATCH * CELLS, FEATURE_IN], 1.0, &mut r));
    let prev = [3, 7];
    grad_check_report(
        |g, v| {
            let mut r = rng(seed ^ 0xfeed);
            let p = TopDownVars::from_slice(&v[..12], h);
            let img: ImageFeatures = TopDown::encode_graph(g, &p, v[16], BATCH, CELLS)?;
            let s = TopDownState {
                h1: v[12],
                c1: v[13],
                h2: v[14],
                c2: v[15],
            };
            let (logp, s, alpha) = TopDown::step_graph(g, &p, &img, &s, &prev, &StepMasks::default())?;
            let parts = [
                probe(g, logp, &mut r)?,
                probe(g, s.h1, &mut r)?,
                probe(g, s.c1, &mut r)?,
                probe(g, s.h2, &mut r)?,
                probe(g, s.c2, &mut r)?,
                probe(g, alpha, &mut r)?,
            ];
            total(g, &parts)
        },
        &params,
        EPSILON,
    )
    .expect("decoder step grad check")
}

/// The FC baseline's image step, and one word step from a random state.
pub fn fc_baseline_step_check(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let model = FcBaseline::new(width8(), &mut r);
    let mut params = rescaled(&model, &mut r);
    let h = model.dims().hidden;
    params.push(Tensor::uniform(&[BATCH * CELLS, FEATURE_IN], 1.0, &mut r));
    params.push(Tensor::uniform(&[BATCH, h], 0.5, &mut r));
    params.push(Tensor::uniform(&[BATCH, h], 0.5, &mut r));
    let prev = [0, 5];
    grad_check_report(
        |g, v| {
            let mut r = rng(seed ^ 0xbeef);
            let p = FcVars::from_slice(&v[..9], h);
            let (h0, c0) = FcBaseline::image_step_graph(g, &p, v[9], BATCH, CELLS)?;
            let (logp, h1, c1) = FcBaseline::step_graph(g, &p, v[10], v[11], &prev, &StepMasks::default())?;
            let parts = [
                probe(g, h0, &mut r)?,
                probe(g, c0, &mut r)?,
                probe(g, logp, &mut r)?,
                probe(g, h1, &mut r)?,
                probe(g, c1, &mut r)?,
            ];
            total(g, &parts)
        },
        &params,
        EPSILON,
    )
    .expect("fc step grad check")
}

/// One language-model step from a random state.
pub fn lm_step_check(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let model = LanguageModel::new(width8(), &mut r);
    let mut params = rescaled(&model, &mut r);
    let h = model.dims().hidden;
    params.push(Tensor::uniform(&[BATCH, h], 0.5, &mut r));
    params.push(Tensor::uniform(&[BATCH, h], 0.5, &mut r));
    let prev = [1, 4];
    grad_check_report(
        |g, v| {
            let mut r = rng(seed ^ 0xcafe);
            let p = LmVars::from_slice(&v[..5], h);
            let (logp, h1, c1) = LanguageModel::step_graph(g, &p, v[5], v[6], &prev, &StepMasks::default())?;
            let parts = [probe(g, logp, &mut r)?, probe(g, h1, &mut r)?, probe(g, c1, &mut r)?];
            total(g, &parts)
        },
        &params,
        EPSILON,
    )
    .expect("lm step grad check")
}

/// Attention alone: gradients reach the cells, the query state and all
/// three attention matrices.
pub fn attention_step_check(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let d = width8();
    let params = vec![
        Tensor::uniform(&[d.feature, d.attention], 0.5, &mut r),
        Tensor::uniform(&[d.hidden, d.attention], 0.5, &mut r),
        Tensor::uniform(&[d.attention, 1], 0.5, &mut r),
        Tensor::uniform(&[BATCH, CELLS, d.feature], 1.0, &mut r),
        Tensor::uniform(&[BATCH, d.hidden], 1.0, &mut r),
    ];
    grad_check_report(
        |g, v| {
            let mut r = rng(seed ^ 0xd00d);
            let p = AttentionVars {
                w_v: v[0],
                w_h: v[1],
                u: v[2],
            };
            let keys = attention_keys(g, p, v[3])?;
            let (v_hat, alpha) = attend(g, p, v[3], keys, v[4])?;
            let parts = [probe(g, v_hat, &mut r)?, probe(g, alpha, &mut r)?];
            total(g, &parts)
        },
        &params,
        EPSILON,
    )
    .expect("attention grad check")
}

/// Worst violations over `cases` random attention problems:
/// `(max |Σα̂ - 1|, max amount v̂ leaves the cells' per-dimension range)`.
pub fn attention_invariant_violations(cases: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let (mut sum_err, mut hull_err) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let n = r.gen_range(1..=12);
        let d = r.gen_range(1..=8);
        let h = r.gen_range(1..=8);
        let a = r.gen_range(1..=8);
        let scale = r.gen_range(0.01..20.0);
        let params = Attention {
            w_v: Tensor::uniform(&[d, a], scale, &mut r),
            w_h: Tensor::uniform(&[h, a], scale, &mut r),
            u: Tensor::uniform(&[a, 1], scale, &mut r),
        };
        let cells = Tensor::uniform(&[n, d], r.gen_range(0.1..100.0), &mut r);
        let h1: Vec<f64> = (0..h).map(|_| r.gen_range(-3.0..3.0)).collect();
        let (v_hat, alpha) = attention_step(&cells, &h1, &params).expect("attention step");
        sum_err = sum_err.max((alpha.iter().sum::<f64>() - 1.0).abs());
        for (j, &x) in v_hat.iter().enumerate() {
            let col = (0..n).map(|i| cells.data()[i * d + j]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            hull_err = hull_err.max(lo - x).max(x - hi);
        }
    }
    (sum_err, hull_err)
}
