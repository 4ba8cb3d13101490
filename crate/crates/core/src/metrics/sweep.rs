use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate_with, CiderD, MetricsReport};
use crate::corpus::{EvalSet, FeatureGrid, Vocabulary};
use crate::decoding::{decode_all, DecodingConfig};
use crate::models::SequenceModel;
use crate::{Error, Result};

/// Metrics for one (β, k) decoding setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub beam: usize,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    pub diversity: f64,
    pub vocab_usage: f64,
    pub filtered_fallback_rate: f64,
}

impl SweepRow {
    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            bleu4: self.bleu4,
            rouge_l: self.rouge_l,
            cider_d: self.cider_d,
            diversity: self.diversity,
            vocab_usage: self.vocab_usage,
        }
    }
}

/// Decodes the eval set once per grid point (β-major order) and scores it.
/// Everything but `beta` and `beam_width` comes from `base`.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    captioner: &dyn SequenceModel,
    lm: Option<&dyn SequenceModel>,
    eval: &EvalSet,
    vocab: &Vocabulary,
    base: &DecodingConfig,
    betas: &[f64],
    beams: &[usize],
    threads: usize,
) -> Result<Vec<SweepRow>> {
    if betas.is_empty() || beams.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let refs = eval.references();
    let cider = CiderD::new(&refs)?;
    let grids: Vec<&FeatureGrid> = eval.examples().iter().map(|e| &e.grid).collect();
    let mut rows = Vec::with_capacity(betas.len() * beams.len());
    for &beta in betas {
        for &beam in beams {
            let cfg = DecodingConfig {
                beta,
                beam_width: beam,
                ..base.clone()
            };
            cfg.validate()?;
            let out = decode_all(&grids, captioner, lm, &cfg, vocab, threads)?;
            let fallbacks = out.iter().filter(|o| o.filtered_fallback).count();
            let sentences: Vec<Vec<String>> = out.into_iter().map(|o| o.sentence).collect();
            let r = evaluate_with(&sentences, &refs, vocab, &cider)?;
            rows.push(SweepRow {
                beta,
                beam,
                bleu4: r.bleu4,
                rouge_l: r.rouge_l,
                cider_d: r.cider_d,
                diversity: r.diversity,
                vocab_usage: r.vocab_usage,
                filtered_fallback_rate: fallbacks as f64 / sentences.len() as f64,
            });
        }
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "beta,beam,bleu4,rouge_l,cider_d,diversity,vocab_usage,filtered_fallback_rate";

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "{SWEEP_HEADER}")?;
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.beta, r.beam, r.bleu4, r.rouge_l, r.cider_d, r.diversity, r.vocab_usage, r.filtered_fallback_rate
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Metric(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
