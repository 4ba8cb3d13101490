mod support;

use mmicap::corpus::{generate_synthetic_corpus, synthetic_lexicon, AttributeInventory, SynthConfig};
use mmicap::metrics::{bleu4, cider_d, fs_baseline, rouge_l};
use proptest::prelude::*;
use support::oracle;

#[test]
fn toy_corpus_matches_oracles() {
    let (c, r) = oracle::toy_corpus();
    assert!((bleu4(&c, &r).unwrap() - oracle::bleu4(&c, &r)).abs() < 1e-9);
    assert!((rouge_l(&c, &r).unwrap() - oracle::rouge_l(&c, &r)).abs() < 1e-9);
    assert!((cider_d(&c, &r).unwrap() - oracle::cider_d(&c, &r)).abs() < 1e-9);
}

#[test]
fn copied_single_reference_reaches_self_similarity() {
    let (_, refs) = oracle::toy_corpus();
    let single: Vec<Vec<Vec<String>>> = refs.iter().map(|r| vec![r[0].clone()]).collect();
    let copied: Vec<Vec<String>> = single.iter().map(|r| r[0].clone()).collect();
    assert!((bleu4(&copied, &single).unwrap() - 1.0).abs() < 1e-12);
    assert!((rouge_l(&copied, &single).unwrap() - 1.0).abs() < 1e-12);
    let c = cider_d(&copied, &single).unwrap();
    assert!((c - oracle::cider_d(&copied, &single)).abs() < 1e-9);
    // Any other candidate set scores lower against the same idf.
    let swapped = vec![copied[1].clone(), copied[2].clone(), copied[0].clone()];
    assert!(cider_d(&swapped, &single).unwrap() < c);
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(prop_oneof!["a", "b", "c", "d", "e"], 1..7)
        .prop_map(|v| v.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_corpora_match_oracles(
        data in proptest::collection::vec((sentence(), proptest::collection::vec(sentence(), 1..4)), 2..5)
    ) {
        let (c, r): (Vec<_>, Vec<_>) = data.into_iter().unzip();
        prop_assert!((bleu4(&c, &r).unwrap() - oracle::bleu4(&c, &r)).abs() < 1e-9);
        prop_assert!((rouge_l(&c, &r).unwrap() - oracle::rouge_l(&c, &r)).abs() < 1e-9);
        prop_assert!((cider_d(&c, &r).unwrap() - oracle::cider_d(&c, &r)).abs() < 1e-9);
    }

    #[test]
    fn metrics_ignore_image_order(
        data in proptest::collection::vec((sentence(), proptest::collection::vec(sentence(), 1..4)), 2..5),
        rot in 0usize..5
    ) {
        let (c, r): (Vec<_>, Vec<_>) = data.into_iter().unzip();
        let k = rot % c.len();
        let (mut c2, mut r2) = (c.clone(), r.clone());
        c2.rotate_left(k);
        r2.rotate_left(k);
        prop_assert!((bleu4(&c, &r).unwrap() - bleu4(&c2, &r2).unwrap()).abs() < 1e-12);
        prop_assert!((rouge_l(&c, &r).unwrap() - rouge_l(&c2, &r2).unwrap()).abs() < 1e-12);
        prop_assert!((cider_d(&c, &r).unwrap() - cider_d(&c2, &r2).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn fs_baseline_is_seeded() {
    let cfg = SynthConfig {
        num_train_images: 10,
        num_eval_images: 12,
        ..SynthConfig::default()
    };
    let (train, eval) = generate_synthetic_corpus(&cfg, 3).unwrap();
    let lex = synthetic_lexicon(&AttributeInventory::default());
    let vocab = mmicap::corpus::build_vocabulary(&train.sentences(), 0, &lex).unwrap();
    let a = fs_baseline(&eval, 5, &vocab).unwrap();
    assert_eq!(a, fs_baseline(&eval, 5, &vocab).unwrap());
    assert!(a.diversity > 0.0 && a.diversity <= 1.0);
}

#[test]
fn identical_references_give_perfect_rouge_for_any_draw() {
    let cfg = SynthConfig {
        num_train_images: 4,
        num_eval_images: 3,
        refs_per_eval_image: 2,
        generic_rate: 1.0,
        ..SynthConfig::default()
    };
    let (train, eval) = generate_synthetic_corpus(&cfg, 0).unwrap();
    let mut c = eval.into_corpus();
    for e in &mut c.examples {
        e.sentences[1] = e.sentences[0].clone();
    }
    let eval = mmicap::corpus::EvalSet::new(c).unwrap();
    let lex = synthetic_lexicon(&AttributeInventory::default());
    let vocab = mmicap::corpus::build_vocabulary(&train.sentences(), 0, &lex).unwrap();
    for seed in 0..5 {
        let r = fs_baseline(&eval, seed, &vocab).unwrap();
        assert!((r.rouge_l - 1.0).abs() < 1e-12);
    }
}

#[test]
fn cider_d_is_bit_identical_across_scorers() {
    // Long sentences over a wide vocabulary, so the sums have many terms.
    let sent = |a: usize, len: usize| (0..len).map(|j| format!("w{}", (a * 31 + j * j * 7 + j * a) % 97)).collect::<Vec<_>>();
    let refs: Vec<Vec<Vec<String>>> = (0..30).map(|i| (0..5).map(|r| sent(i + 3 * r, 12 + (i + r) % 9)).collect()).collect();
    let cands: Vec<Vec<String>> = (0..30).map(|i| sent(i + 3, 12 + i % 9)).collect();
    let first = cider_d(&cands, &refs).unwrap();
    for _ in 0..20 {
        assert_eq!(cider_d(&cands, &refs).unwrap().to_bits(), first.to_bits());
    }
}
