//! Longer end-to-end runs shared by the training tests and the acceptance run.

#![allow(dead_code)]

use std::time::Instant;

use mmicap::corpus::{build_vocabulary, generate_synthetic_corpus, synthetic_lexicon, SynthConfig};
use mmicap::decoding::greedy;
use mmicap::models::{build_model, Batch, Dims, ModelKind};
use mmicap::training::{
    clip_gradients, loss_and_gradients, stream_rng, teacher_forcing_loss, Adam, TrainConfig, STREAM_BATCHES,
    STREAM_INIT,
};
use rand::seq::SliceRandom;

pub const OVERFIT_EXAMPLES: usize = 50;
pub const OVERFIT_MAX_EPOCHS: usize = 500;
pub const OVERFIT_LOSS: f64 = 0.05;

#[derive(Debug)]
pub struct Overfit {
    /// First epoch whose full-set teacher-forcing loss fell below the
    /// target, if any.
    pub epochs: Option<usize>,
    pub final_loss: f64,
    /// Training sentences greedy decoding reproduces exactly.
    pub reproduced: usize,
    pub seconds: f64,
}

/// Memorizes 50 (image, sentence) pairs with the top-down model.
pub fn overfit(kind: ModelKind, seed: u64) -> Overfit {
    let start = Instant::now();
    let cfg = SynthConfig {
        num_train_images: OVERFIT_EXAMPLES,
        num_eval_images: 1,
        sentences_per_image: 1,
        refs_per_eval_image: 2,
        ..SynthConfig::default()
    };
    let (train, _) = generate_synthetic_corpus(&cfg, seed).unwrap();
    let vocab = build_vocabulary(&train.sentences(), 0, &synthetic_lexicon(&cfg.inventory)).unwrap();
    let dims = Dims::uniform(vocab.len(), cfg.grid_depth, 32);
    let mut model = build_model(kind, dims, &mut stream_rng(seed, STREAM_INIT)).unwrap();
    let tc = TrainConfig {
        learning_rate: 5e-3,
        images_per_batch: 10,
        sentences_per_image: 1,
        dropout: 0.0,
        freeze_encoder_epochs: 0,
        ..TrainConfig::default()
    };
    let encoded: Vec<Vec<usize>> = train.encode(&vocab).into_iter().map(|e| e.sentences[0].clone()).collect();
    let full = Batch {
        grids: train.examples.iter().map(|e| &e.grid).collect(),
        sentences: encoded.iter().map(Vec::as_slice).collect(),
    };
    let mut adam = Adam::from_config(&model.parameters(), &tc);
    let mut rng = stream_rng(seed, STREAM_BATCHES);
    let mut order: Vec<usize> = (0..OVERFIT_EXAMPLES).collect();
    let mut epochs = None;
    let mut final_loss = teacher_forcing_loss(model.as_ref(), &full).unwrap();
    for epoch in 1..=OVERFIT_MAX_EPOCHS {
        order.shuffle(&mut rng);
        for idx in order.chunks(tc.images_per_batch) {
            let b = Batch {
                grids: idx.iter().map(|&i| &train.examples[i].grid).collect(),
                sentences: idx.iter().map(|&i| encoded[i].as_slice()).collect(),
            };
            let (_, mut grads) = loss_and_gradients(model.as_ref(), &b, None, false).unwrap();
            clip_gradients(&mut grads, tc.grad_clip);
            adam.step(model.parameters_mut(), &grads).unwrap();
        }
        final_loss = teacher_forcing_loss(model.as_ref(), &full).unwrap();
        if final_loss < OVERFIT_LOSS {
            epochs = Some(epoch);
            break;
        }
    }
    let reproduced = train
        .examples
        .iter()
        .zip(&encoded)
        .filter(|(e, s)| {
            let words = greedy(Some(&e.grid), model.as_ref(), s.len() + 4).unwrap();
            words[..] == s[1..s.len() - 1]
        })
        .count();
    Overfit {
        epochs,
        final_loss,
        reproduced,
        seconds: start.elapsed().as_secs_f64(),
    }
}
