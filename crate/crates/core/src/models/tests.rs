use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::FeatureGrid;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn grid(h: usize, w: usize, d: usize, seed: u64) -> FeatureGrid {
    let mut r = rng(seed);
    let values = (0..h * w * d).map(|_| r.gen_range(-1.0f32..1.0)).collect();
    FeatureGrid::new(h, w, d, values).unwrap()
}

fn small_dims() -> Dims {
    Dims {
        vocab: 7,
        feature_in: 5,
        feature: 6,
        embed: 4,
        hidden: 8,
        attention: 3,
    }
}

#[test]
fn constant_grid_gives_equal_cells() {
    let g = FeatureGrid::new(2, 3, 4, vec![0.5; 24]).unwrap();
    let proj = EncoderProjection::new(4, 5, &mut rng(1));
    let (v, v_bar) = encode_features(&g, &proj).unwrap();
    for i in 1..6 {
        assert_eq!(v.row(i), v.row(0));
    }
    for (a, b) in v_bar.data().iter().zip(v.row(0)) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn zero_projection_gives_zero_features() {
    let g = grid(2, 2, 3, 2);
    let proj = EncoderProjection {
        w: Tensor::zeros(&[3, 4]),
        b: Tensor::zeros(&[4]),
    };
    let (v, v_bar) = encode_features(&g, &proj).unwrap();
    assert!(v.data().iter().chain(v_bar.data()).all(|&x| x == 0.0));
}

#[test]
fn hand_set_projection_mean_of_relu() {
    let g = FeatureGrid::new(2, 2, 1, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
    let proj = EncoderProjection {
        w: Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
        b: Tensor::vector(vec![-1.0]),
    };
    // 2x - 1 -> [1, -5, 5, 0] -> relu [1, 0, 5, 0]
    let (v, v_bar) = encode_features(&g, &proj).unwrap();
    assert_eq!(v.data(), &[1.0, 0.0, 5.0, 0.0]);
    assert!((v_bar.data()[0] - 1.5).abs() < 1e-15);
}

#[test]
fn projection_depth_mismatch_is_an_error() {
    let g = grid(2, 2, 3, 2);
    let proj = EncoderProjection::new(4, 4, &mut rng(0));
    assert!(matches!(encode_features(&g, &proj), Err(Error::Dimension(_))));
}

#[test]
fn identical_cells_attend_uniformly() {
    let v = Tensor::from_rows(&[[0.3, -1.0], [0.3, -1.0], [0.3, -1.0], [0.3, -1.0]]).unwrap();
    let att = Attention::new(2, 3, 4, &mut rng(3));
    let (v_hat, alpha) = attention_step(&v, &[0.1, 0.2, -0.4], &att).unwrap();
    for a in &alpha {
        assert!((a - 0.25).abs() < 1e-15);
    }
    assert!((v_hat[0] - 0.3).abs() < 1e-15 && (v_hat[1] + 1.0).abs() < 1e-15);
}

#[test]
fn saturated_score_selects_one_cell() {
    // w_v = I, w_h = 0, u = [1, 0]: score_i = tanh(v_i[0]), so scale u to get +20.
    let v = Tensor::from_rows(&[[5.0, 1.0], [-5.0, 2.0], [-5.0, 3.0]]).unwrap();
    let att = Attention {
        w_v: Tensor::eye(2),
        w_h: Tensor::zeros(&[1, 2]),
        u: Tensor::new(vec![2, 1], vec![10.0, 0.0]).unwrap(),
    };
    let (v_hat, alpha) = attention_step(&v, &[0.0], &att).unwrap();
    assert!(alpha[0] > 0.999);
    assert!((v_hat[0] - 5.0).abs() < 0.02 && (v_hat[1] - 1.0).abs() < 0.01);
}

#[test]
fn three_cell_attention_matches_hand_arithmetic() {
    let v = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
    let att = Attention {
        w_v: Tensor::eye(2),
        w_h: Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap(),
        u: Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap(),
    };
    let (v_hat, alpha) = attention_step(&v, &[2.0], &att).unwrap();
    // W_h h1 = [1, -1]
    let s = [
        2f64.tanh() + 2.0 * (-1f64).tanh(),
        1f64.tanh() + 2.0 * 0f64.tanh(),
        2f64.tanh() + 2.0 * 0f64.tanh(),
    ];
    let z: f64 = s.iter().map(|x| x.exp()).sum();
    let a: Vec<f64> = s.iter().map(|x| x.exp() / z).collect();
    for i in 0..3 {
        assert!((alpha[i] - a[i]).abs() < 1e-10);
    }
    assert!((v_hat[0] - (a[0] + a[2])).abs() < 1e-10);
    assert!((v_hat[1] - (a[1] + a[2])).abs() < 1e-10);
}

#[test]
fn zero_attention_parameters_are_uniform() {
    let v = Tensor::uniform(&[6, 3], 2.0, &mut rng(5));
    let att = Attention {
        w_v: Tensor::zeros(&[3, 2]),
        w_h: Tensor::zeros(&[4, 2]),
        u: Tensor::zeros(&[2, 1]),
    };
    let (_, alpha) = attention_step(&v, &[1.0, -2.0, 0.5, 3.0], &att).unwrap();
    assert!(alpha.iter().all(|a| (a - 1.0 / 6.0).abs() < 1e-15));
}

#[test]
fn permuting_cells_preserves_attention_outputs() {
    let mut r = rng(9);
    let v = Tensor::uniform(&[5, 3], 1.0, &mut r);
    let att = Attention::new(3, 4, 2, &mut r);
    let h1 = [0.2, -0.7, 0.9, 0.1];
    let perm = [3, 0, 4, 1, 2];
    let rows: Vec<&[f64]> = perm.iter().map(|&i| v.row(i)).collect();
    let pv = Tensor::from_rows(&rows).unwrap();
    let (a_hat, a_alpha) = attention_step(&v, &h1, &att).unwrap();
    let (b_hat, b_alpha) = attention_step(&pv, &h1, &att).unwrap();
    for (x, y) in a_hat.iter().zip(&b_hat) {
        assert!((x - y).abs() < 1e-12);
    }
    for (k, &i) in perm.iter().enumerate() {
        assert!((b_alpha[k] - a_alpha[i]).abs() < 1e-12);
    }
}

#[test]
fn decoder_step_is_normalized_and_deterministic() {
    let m = TopDown::new(small_dims(), &mut rng(11));
    let g = grid(2, 3, 5, 12);
    let (ctx, s0) = m.start(Some(&g)).unwrap();
    let (logp, s1, alpha) = m.decoder_step(&ctx, &s0, Vocabulary::BOS).unwrap();
    let total: f64 = logp.iter().map(|x| x.exp()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let again = m.decoder_step(&ctx, &s0, Vocabulary::BOS).unwrap();
    assert_eq!(again.0, logp);
    assert_eq!(again.1, s1);
    assert!(matches!(
        m.decoder_step(&ctx, &s0, 7),
        Err(Error::TokenOutOfRange { id: 7, size: 7 })
    ));
}

#[test]
fn batched_step_matches_single_steps() {
    let m = TopDown::new(small_dims(), &mut rng(13));
    let g = grid(2, 3, 5, 14);
    let (ctx, s0) = m.start(Some(&g)).unwrap();
    let (_, s1) = m.step(&ctx, &[&s0], &[0]).unwrap();
    let (lp, _) = m.step(&ctx, &[&s0, &s1[0], &s0], &[0, 4, 3]).unwrap();
    let (one, _) = m.step(&ctx, &[&s1[0]], &[4]).unwrap();
    for (a, b) in lp[1].iter().zip(&one[0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn check_teacher_forcing_matches_replay(model: &dyn Trainable, grids: &[FeatureGrid]) {
    let sentences: Vec<Vec<usize>> = vec![vec![0, 3, 4, 1], vec![0, 5, 1], vec![0, 6, 6, 3, 2, 1]];
    let mut batch = Batch {
        grids: vec![],
        sentences: sentences.iter().map(|s| s.as_slice()).collect(),
    };
    if !grids.is_empty() {
        batch.grids = (0..3).map(|i| &grids[i % grids.len()]).collect();
    }
    let mut g = Graph::new();
    let tf = model.teacher_forced(&mut g, &batch, None, false).unwrap();
    assert_eq!(tf.num_targets, 3 + 2 + 5);
    let mut replay = 0.0;
    for (i, s) in sentences.iter().enumerate() {
        let lp = sequence_log_prob(model, batch.grids.get(i).copied(), s).unwrap();
        assert!(lp <= 0.0);
        replay += lp;
    }
    assert!((g.scalar(tf.logp_sum) - replay).abs() < 1e-10);
}

#[test]
fn teacher_forcing_equals_stepwise_replay() {
    let grids = vec![grid(2, 3, 5, 20), grid(2, 3, 5, 21)];
    check_teacher_forcing_matches_replay(&TopDown::new(small_dims(), &mut rng(1)), &grids);
    check_teacher_forcing_matches_replay(&FcBaseline::new(small_dims(), &mut rng(2)), &grids);
    check_teacher_forcing_matches_replay(&LanguageModel::new(small_dims(), &mut rng(3)), &[]);
}

#[test]
fn untrained_loss_is_near_uniform_entropy() {
    let dims = Dims::uniform(40, 5, 16);
    let m = TopDown::new(dims, &mut rng(4));
    let grids: Vec<FeatureGrid> = (0..4).map(|i| grid(2, 3, 5, 30 + i)).collect();
    let sentences: Vec<Vec<usize>> = (0..4).map(|i| vec![0, 3 + i, 10 + i, 20, 1]).collect();
    let batch = Batch {
        grids: grids.iter().collect(),
        sentences: sentences.iter().map(|s| s.as_slice()).collect(),
    };
    let mut g = Graph::new();
    let tf = m.teacher_forced(&mut g, &batch, None, false).unwrap();
    let loss = -g.scalar(tf.logp_sum) / tf.num_targets as f64;
    let ln_v = (40f64).ln();
    assert!((loss - ln_v).abs() / ln_v < 0.05, "loss {loss} vs ln V {ln_v}");
}

#[test]
fn sentence_log_prob_rejects_short_input() {
    let lm = LanguageModel::new(small_dims(), &mut rng(5));
    assert!(matches!(lm_sentence_log_prob(&[0], &lm), Err(Error::SentenceTooShort(1))));
}

#[test]
fn lm_mass_over_short_sentences_is_at_most_one() {
    let dims = Dims::uniform(3, 1, 4);
    let mut lm = LanguageModel::new(dims, &mut rng(6));
    for (_, t) in lm.parameters_mut() {
        for x in t.data_mut() {
            *x *= 10.0;
        }
    }
    // Framed sentences with 0..=2 content tokens; the end token closes each.
    let content = [0usize, 2];
    let mut mass = 0.0;
    let mut seqs: Vec<Vec<usize>> = vec![vec![]];
    for a in content {
        seqs.push(vec![a]);
        for b in content {
            seqs.push(vec![a, b]);
        }
    }
    for c in seqs {
        let mut s = vec![0];
        s.extend(c);
        s.push(1);
        mass += lm_sentence_log_prob(&s, &lm).unwrap().exp();
    }
    assert!(mass <= 1.0 + 1e-12 && mass > 0.0, "{mass}");
}

#[test]
fn fc_start_consumes_the_image() {
    let m = FcBaseline::new(small_dims(), &mut rng(7));
    let (_, a) = m.start(Some(&grid(2, 3, 5, 1))).unwrap();
    let (_, b) = m.start(Some(&grid(2, 3, 5, 2))).unwrap();
    assert_ne!(a, b);
    assert!(a.0[0].iter().any(|&x| x != 0.0));
    assert!(m.start(None).is_err());
}

#[test]
fn frozen_encoder_receives_no_gradient() {
    let m = TopDown::new(small_dims(), &mut rng(8));
    let g0 = grid(2, 3, 5, 3);
    let s = [0usize, 3, 4, 1];
    let batch = Batch {
        grids: vec![&g0],
        sentences: vec![&s],
    };
    let mut g = Graph::new();
    let tf = m.teacher_forced(&mut g, &batch, None, true).unwrap();
    let grads = g.backward(tf.logp_sum).unwrap();
    assert!(grads.get(tf.params[0]).is_none());
    assert!(grads.get(tf.params[1]).is_none());
    assert!(grads.get(tf.params[2]).is_some());
}

#[test]
fn dropout_masks_are_inverted_and_seeded() {
    let mut d = Dropout::new(0.5, rng(1)).unwrap();
    let m = d.mask(10, 10).unwrap();
    assert!(m.data().iter().all(|&x| x == 0.0 || x == 2.0));
    let mut d2 = Dropout::new(0.5, rng(1)).unwrap();
    assert_eq!(d2.mask(10, 10).unwrap(), m);
    assert!(Dropout::new(0.0, rng(1)).unwrap().mask(2, 2).is_none());
    assert!(Dropout::new(1.0, rng(1)).is_err());
}
