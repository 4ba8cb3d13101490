use std::collections::{BTreeMap, HashMap, HashSet};

use super::ngrams::ngram_counts;
use super::check_inputs;
use crate::{Error, Result};

const MAX_N: usize = 4;
const SIGMA: f64 = 6.0;

/// CIDEr-D with document frequencies taken from a fixed reference set.
///
/// Building the scorer once and reusing it across candidate sets avoids
/// recounting document frequencies in sweeps.
pub struct CiderD<'a> {
    references: &'a [Vec<Vec<String>>],
    df: [HashMap<&'a [String], f64>; MAX_N],
    log_n: f64,
    ref_vecs: Vec<Vec<[TfIdf<'a>; MAX_N]>>,
}

struct TfIdf<'a> {
    // Ordered so the float sums below do not depend on the hasher seed.
    weights: BTreeMap<&'a [String], f64>,
    norm: f64,
}

impl<'a> CiderD<'a> {
    pub fn new(references: &'a [Vec<Vec<String>>]) -> Result<Self> {
        if references.len() < 2 {
            return Err(Error::Metric(format!(
                "CIDEr-D needs at least 2 images, got {}",
                references.len()
            )));
        }
        if references.iter().any(|r| r.is_empty()) {
            return Err(Error::Metric("every image needs a reference".into()));
        }
        let mut df: [HashMap<&[String], f64>; MAX_N] = Default::default();
        for refs in references {
            for n in 1..=MAX_N {
                let grams: HashSet<&[String]> = refs.iter().flat_map(|r| r.windows(n)).collect();
                for g in grams {
                    *df[n - 1].entry(g).or_insert(0.0) += 1.0;
                }
            }
        }
        let mut scorer = Self {
            references,
            df,
            log_n: (references.len() as f64).ln(),
            ref_vecs: Vec::new(),
        };
        scorer.ref_vecs = references
            .iter()
            .map(|refs| refs.iter().map(|r| scorer.vectors(r)).collect())
            .collect();
        Ok(scorer)
    }

    fn vectors<'s>(&self, s: &'s [String]) -> [TfIdf<'s>; MAX_N]
    where
        'a: 's,
    {
        std::array::from_fn(|i| {
            let weights: BTreeMap<&[String], f64> = ngram_counts(s, i + 1)
                .into_iter()
                .map(|(g, k)| {
                    let df = self.df[i].get(g).copied().unwrap_or(0.0).max(1.0);
                    (g, k as f64 * (self.log_n - df.ln()))
                })
                .collect();
            let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
            TfIdf { weights, norm }
        })
    }

    /// Per-image scores, in reference order.
    pub fn image_scores(&self, candidates: &[Vec<String>]) -> Result<Vec<f64>> {
        check_inputs(candidates, self.references, 1)?;
        Ok(candidates
            .iter()
            .zip(self.references)
            .zip(&self.ref_vecs)
            .map(|((c, refs), rvecs)| {
                let cv = self.vectors(c);
                let mut sum = 0.0;
                for (r, rv) in refs.iter().zip(rvecs) {
                    let delta = c.len() as f64 - r.len() as f64;
                    let penalty = (-(delta * delta) / (2.0 * SIGMA * SIGMA)).exp();
                    for n in 0..MAX_N {
                        let mut val: f64 = cv[n]
                            .weights
                            .iter()
                            .map(|(g, &w)| {
                                let wr = rv[n].weights.get(*g).copied().unwrap_or(0.0);
                                w.min(wr) * wr
                            })
                            .sum();
                        if cv[n].norm != 0.0 && rv[n].norm != 0.0 {
                            val /= cv[n].norm * rv[n].norm;
                        }
                        sum += val * penalty;
                    }
                }
                sum / MAX_N as f64 / refs.len() as f64 * 10.0
            })
            .collect())
    }

    pub fn score(&self, candidates: &[Vec<String>]) -> Result<f64> {
        let s = self.image_scores(candidates)?;
        Ok(s.iter().sum::<f64>() / s.len() as f64)
    }
}

/// Corpus CIDEr-D: mean over images of the per-image score.
pub fn cider_d(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    CiderD::new(references)?.score(candidates)
}
