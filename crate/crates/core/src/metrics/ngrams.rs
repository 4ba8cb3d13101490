use std::collections::BTreeMap;

pub(crate) type Counts<'a> = BTreeMap<&'a [String], usize>;

/// Counts of every `n`-gram of `s`.
pub(crate) fn ngram_counts(s: &[String], n: usize) -> Counts<'_> {
    let mut out = BTreeMap::new();
    if n == 0 || s.len() < n {
        return out;
    }
    for w in s.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}
