//! Brute-force reference scorers. They are deliberately naive (string keys,
//! linear scans, subsequence enumeration) and share no code with the crate.

#![allow(dead_code)]

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

fn ngrams(s: &[String], n: usize) -> Vec<String> {
    if s.len() < n {
        return vec![];
    }
    (0..=s.len() - n).map(|i| s[i..i + n].join(" ")).collect()
}

fn count(xs: &[String], x: &str) -> usize {
    xs.iter().filter(|y| y.as_str() == x).count()
}

fn distinct(xs: &[String]) -> Vec<String> {
    let mut out: Vec<String> = vec![];
    for x in xs {
        if !out.contains(x) {
            out.push(x.clone());
        }
    }
    out
}

/// Corpus BLEU-4: clipped n-gram counts per image, closest reference length
/// (shorter on ties) for the brevity penalty, zero precisions replaced by 1e-9.
pub fn bleu4(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (mut hit, mut total) = (0usize, 0usize);
        for (c, rs) in cands.iter().zip(refs) {
            let cg = ngrams(c, n);
            total += cg.len();
            for g in distinct(&cg) {
                let max_ref = rs.iter().map(|r| count(&ngrams(r, n), &g)).max().unwrap_or(0);
                hit += count(&cg, &g).min(max_ref);
            }
        }
        let p = if hit == 0 { 1e-9 } else { hit as f64 / total as f64 };
        log_sum += p.ln() / 4.0;
    }
    let c: usize = cands.iter().map(|c| c.len()).sum();
    let mut r = 0usize;
    for (cand, rs) in cands.iter().zip(refs) {
        let mut best = rs[0].len();
        for x in rs {
            let (d, bd) = ((x.len() as i64 - cand.len() as i64).abs(), (best as i64 - cand.len() as i64).abs());
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_sum.exp()
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == *n))
}

/// LCS length by enumerating every subsequence of `a`.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16, "oracle enumerates 2^len subsequences");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut total = 0.0;
    for (c, rs) in cands.iter().zip(refs) {
        let mut best = 0.0f64;
        for r in rs {
            let l = lcs(c, r) as f64;
            if l == 0.0 {
                continue;
            }
            let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
            let f = (1.0 + beta2) * p * rec / (rec + beta2 * p);
            best = best.max(f);
        }
        total += best;
    }
    total / cands.len() as f64
}

/// tf-idf vector of one sentence for n-gram order `n` as (gram, weight) pairs.
fn tfidf(s: &[String], n: usize, df: &dyn Fn(&str) -> f64, log_n: f64) -> Vec<(String, f64)> {
    let g = ngrams(s, n);
    distinct(&g)
        .into_iter()
        .map(|x| {
            let w = count(&g, &x) as f64 * (log_n - df(&x).max(1.0).ln());
            (x, w)
        })
        .collect()
}

fn lookup(v: &[(String, f64)], g: &str) -> f64 {
    v.iter().find(|(x, _)| x == g).map(|p| p.1).unwrap_or(0.0)
}

/// CIDEr-D: clipped tf-idf cosine per n-gram order, gaussian length penalty
/// with σ = 6, averaged over references and orders, times 10, mean over images.
pub fn cider_d(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
    let n_imgs = refs.len();
    let log_n = (n_imgs as f64).ln();
    let df = |g: &str, n: usize| -> f64 {
        refs.iter()
            .filter(|rs| rs.iter().any(|r| ngrams(r, n).iter().any(|x| x == g)))
            .count() as f64
    };
    let mut total = 0.0;
    for (c, rs) in cands.iter().zip(refs) {
        let mut per_n = [0.0f64; 4];
        for r in rs {
            for n in 1..=4 {
                let dfn = |g: &str| df(g, n);
                let vc = tfidf(c, n, &dfn, log_n);
                let vr = tfidf(r, n, &dfn, log_n);
                let norm_c = vc.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
                let norm_r = vr.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
                let mut val = 0.0;
                for (g, w) in &vc {
                    let wr = lookup(&vr, g);
                    val += w.min(wr) * wr;
                }
                if norm_c != 0.0 && norm_r != 0.0 {
                    val /= norm_c * norm_r;
                }
                let delta = c.len() as f64 - r.len() as f64;
                val *= (-(delta * delta) / (2.0 * 36.0)).exp();
                per_n[n - 1] += val;
            }
        }
        let mean: f64 = per_n.iter().sum::<f64>() / 4.0;
        total += mean / rs.len() as f64 * 10.0;
    }
    total / cands.len() as f64
}

/// Three images, two to three references each, with partial overlap.
pub fn toy_corpus() -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
    let cands = vec![
        toks("the black jacket looks great on you"),
        toks("swap your red skirt for a blue one"),
        toks("nice outfit"),
    ];
    let refs = vec![
        vec![
            toks("the black jacket looks great on you"),
            toks("the black jacket is a great choice"),
            toks("your outfit fits you well"),
        ],
        vec![toks("swap your red skirt for a white skirt"), toks("try a blue skirt instead")],
        vec![
            toks("nice outfit"),
            toks("you look great"),
            toks("the gray boots fit you well"),
        ],
    ];
    (cands, refs)
}
