use std::sync::Arc;

use audiocap_core::features::{load_lmel, log_mel, read_wav, save_lmel, write_wav, AudioClip};
use audiocap_core::model::{load_checkpoint, save_checkpoint};
use audiocap_core::textproc::normalize_caption;
use audiocap_core::training::{evaluate_split, train, Example};
use audiocap_core::{FeatureExtractionConfig, ModelConfig, TrainConfig, Vocabulary, WeightTable};

fn chirp(seconds: f64, f0: f64) -> AudioClip {
    let rate = 16_000;
    let n = (seconds * rate as f64) as usize;
    AudioClip {
        samples: (0..n)
            .map(|i| {
                let t = i as f64 / rate as f64;
                0.3 * (2.0 * std::f64::consts::PI * (f0 + 300.0 * t) * t).sin()
            })
            .collect(),
        sample_rate: rate,
    }
}

#[test]
fn audio_to_checkpoint_to_captions() {
    let dir = tempfile::tempdir().unwrap();
    let captions = ["a low hum", "a high whistle", "a rising tone"];
    let feat_cfg = FeatureExtractionConfig {
        num_mels: 16,
        ..FeatureExtractionConfig::default()
    };
    let mut clips = Vec::new();
    for (i, f0) in [100.0, 2000.0, 600.0].into_iter().enumerate() {
        let wav = dir.path().join(format!("c{i}.wav"));
        write_wav(&wav, &chirp(1.0 + 0.25 * i as f64, f0)).unwrap();
        let feats = log_mel(&read_wav(&wav).unwrap(), &feat_cfg).unwrap();
        let lmel = dir.path().join(format!("c{i}.lmel"));
        save_lmel(&lmel, &feats.data).unwrap();
        let back = load_lmel(&lmel).unwrap();
        assert_eq!(back.data.shape(), feats.data.shape());
        let max_diff = back.data.data().iter().zip(feats.data.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_diff < 1e-5, "stored as f32: {max_diff}");
        assert_eq!(back.source_id, format!("c{i}"));
        clips.push((format!("c{i}.wav"), Arc::new(back.data)));
    }

    let vocab = Vocabulary::build(&captions).unwrap();
    let examples: Vec<Example> = clips
        .iter()
        .zip(captions)
        .map(|((id, f), c)| Example {
            clip_id: id.clone(),
            features: f.clone(),
            targets: vocab.encode(&normalize_caption(c).unwrap()).unwrap(),
        })
        .collect();
    let model_cfg = ModelConfig {
        encoder_hidden: 8,
        decoder_hidden: 16,
        subsample_factor: 4,
        input_features: 16,
        vocab_size: vocab.len(),
        dropout_p: 0.0,
        ..ModelConfig::default()
    };
    // Clips differ in length; batches of one keep training inputs unpadded,
    // exactly as they are seen at inference.
    let train_cfg = TrainConfig {
        batch_size: 1,
        learning_rate: 1e-2,
        max_epochs: 300,
        patience_epochs: 50,
        ..TrainConfig::default()
    };
    let weights = WeightTable::from_vocab(&vocab, 0.5).unwrap();
    let out = train(&examples, model_cfg.clone(), train_cfg, &weights, vocab.eos_index()).unwrap();
    assert!(out.summary.best_rounded_loss < 0.05, "{}", out.summary.best_rounded_loss);

    let ckpt = dir.path().join("best.sscp");
    save_checkpoint(&ckpt, &model_cfg, &out.best).unwrap();
    let (model, params) = load_checkpoint(&ckpt).unwrap();
    let preds = evaluate_split(&clips, &model, &params, vocab.eos_index()).unwrap();
    let again = evaluate_split(&clips, &out.model, &out.best, vocab.eos_index()).unwrap();
    assert_eq!(preds, again);
    for (p, c) in preds.iter().zip(captions) {
        assert_eq!(vocab.words(&p.tokens).join(" "), c);
    }
}
