//! Shared inputs for the criterion benchmarks.

use audiocap_core::metrics::EvaluationItem;
use audiocap_core::model::{ModelConfig, Seq2Seq};
use audiocap_core::training::fixtures::random_features;
use audiocap_core::{ParamStore, Tensor};

/// Mid-sized model: full-length inputs, reduced widths.
pub fn bench_model(factor: usize) -> (Seq2Seq, ParamStore) {
    let cfg = ModelConfig {
        encoder_hidden: 32,
        decoder_hidden: 32,
        vocab_size: 128,
        subsample_factor: factor,
        ..ModelConfig::default()
    };
    Seq2Seq::init(cfg, 0).expect("valid bench config")
}

pub fn bench_input(frames: usize) -> Tensor {
    random_features(frames, 64, 1)
}

/// A synthetic corpus of `n` items with five references each.
pub fn caption_corpus(n: usize) -> Vec<EvaluationItem> {
    let words = ["a", "dog", "barks", "in", "the", "rain", "while", "cars", "pass", "by", "loudly", "slowly"];
    let sentence = |seed: usize, len: usize| -> String {
        (0..len).map(|k| words[(seed * 7 + k * 5 + k * k) % words.len()]).collect::<Vec<_>>().join(" ")
    };
    (0..n)
        .map(|i| {
            let refs: Vec<String> = (0..5).map(|r| sentence(i + r * 3, 6 + (i + r) % 8)).collect();
            let refs: Vec<&str> = refs.iter().map(String::as_str).collect();
            EvaluationItem::from_strs(&format!("item{i}"), &sentence(i + 1, 8 + i % 5), &refs).expect("non-empty")
        })
        .collect()
}
