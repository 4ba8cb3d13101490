use super::ngrams::ngram_counts;
use super::check_inputs;
use crate::Result;

/// Stand-in for a zero n-gram precision so the geometric mean stays finite.
pub const BLEU_ZERO_PRECISION: f64 = 1e-9;

/// Corpus-level BLEU-4 with uniform weights.
///
/// Candidate n-gram counts are clipped per image by the maximum count in any
/// of that image's references. The brevity penalty uses, per image, the
/// reference length closest to the candidate length (the shorter one on
/// ties).
pub fn bleu4(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    check_inputs(candidates, references, 1)?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (c, refs) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(c.len()), l))
            .expect("at least one reference");
        for n in 1..=4 {
            let cc = ngram_counts(c, n);
            let rcs: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            total[n - 1] += c.len().saturating_sub(n - 1);
            for (g, &k) in &cc {
                let max_ref = rcs.iter().filter_map(|rc| rc.get(g)).copied().max().unwrap_or(0);
                matched[n - 1] += k.min(max_ref);
            }
        }
    }
    let log_mean: f64 = (0..4)
        .map(|i| {
            let p = if matched[i] == 0 {
                BLEU_ZERO_PRECISION
            } else {
                matched[i] as f64 / total[i] as f64
            };
            p.ln() / 4.0
        })
        .sum();
    let bp = if cand_len > ref_len {
        1.0
    } else if cand_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * log_mean.exp())
}
