//! Small synthetic corpora for smoke tests, benchmarks and overfitting checks.

use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::model::ModelConfig;
use crate::numcore::{rng, Tensor};
use crate::textproc::{normalize_caption, Vocabulary};

use super::{Example, TrainConfig};

/// Eight short, distinct captions.
pub const OVERFIT_CAPTIONS: [&str; 8] = [
    "a dog barks loudly",
    "rain falls on a tin roof",
    "birds sing in the trees",
    "a car passes by quickly",
    "people talk in a busy room",
    "water flows in a stream",
    "a door creaks and closes",
    "wind blows through dry leaves",
];

pub struct SyntheticCorpus {
    pub vocab: Vocabulary,
    pub examples: Vec<Example>,
    /// `(clip id, caption)` in clip order.
    pub captions: Vec<(String, String)>,
}

impl SyntheticCorpus {
    pub fn clips(&self) -> Vec<(String, Arc<Tensor>)> {
        self.examples
            .iter()
            .map(|e| (e.clip_id.clone(), e.features.clone()))
            .collect()
    }
}

/// Uniform noise in `[-1, 1)`, `frames × features`.
pub fn random_features(frames: usize, features: usize, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let data = (0..frames * features).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::matrix(frames, features, data).expect("shape")
}

/// One clip per caption of [`OVERFIT_CAPTIONS`], each with its own noise
/// pattern.
pub fn overfit_corpus(frames: usize, features: usize, seed: u64) -> Result<SyntheticCorpus> {
    let vocab = Vocabulary::build(&OVERFIT_CAPTIONS)?;
    let mut examples = Vec::new();
    let mut captions = Vec::new();
    for (i, caption) in OVERFIT_CAPTIONS.iter().enumerate() {
        let id = format!("clip_{i:02}");
        let targets = vocab.encode(&normalize_caption(caption)?)?;
        examples.push(Example {
            clip_id: id.clone(),
            features: Arc::new(random_features(frames, features, rng::derive_seed(seed, &[i as u64]))),
            targets,
        });
        captions.push((id, caption.to_string()));
    }
    Ok(SyntheticCorpus {
        vocab,
        examples,
        captions,
    })
}

/// A model small enough to memorise the overfit corpus in seconds.
pub fn overfit_model_config(input_features: usize, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        layers: 3,
        encoder_hidden: 16,
        decoder_hidden: 32,
        subsample_factor: 2,
        input_features,
        vocab_size,
        dropout_p: 0.25,
        max_decode_steps: 22,
    }
}

pub fn overfit_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        learning_rate: 1e-2,
        patience_epochs: 100,
        max_epochs: 2000,
        seed,
        ..TrainConfig::default()
    }
}
