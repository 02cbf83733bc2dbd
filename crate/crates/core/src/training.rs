//! Batch assembly, the optimisation loop with rounded-loss early stopping,
//! and split evaluation.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DropoutSpec, ModelConfig, Seq2Seq};
use crate::numcore::{rng, AdamConfig, AdamState, LossMode, ParamStore, Tensor};
use crate::textproc::{TokenSequence, WeightTable};

/// One input-output pair: a clip's features and one of its captions.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub clip_id: String,
    pub features: Arc<Tensor>,
    pub targets: TokenSequence,
}

/// A padded mini-batch. Feature padding rows are zero and sit at the front
/// of each item; target padding is `<eos>` at the back.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub clip_ids: Vec<String>,
    /// `B × T_max × F`.
    pub features: Tensor,
    pub feature_valid_from: Vec<usize>,
    /// `B × S_max`, row-major.
    pub targets: Vec<usize>,
    pub target_lengths: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.clip_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip_ids.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn max_targets(&self) -> usize {
        self.targets.len() / self.len().max(1)
    }

    /// The `T_max × F` padded features of item `i`.
    pub fn item_features(&self, i: usize) -> Tensor {
        let (t, f) = (self.features.shape()[1], self.features.shape()[2]);
        let data = self.features.data()[i * t * f..(i + 1) * t * f].to_vec();
        Tensor::matrix(t, f, data).expect("batch layout")
    }

    /// The padded target row of item `i`.
    pub fn item_targets(&self, i: usize) -> &[usize] {
        let s = self.max_targets();
        &self.targets[i * s..(i + 1) * s]
    }
}

/// Shuffles `examples` with `seed` and groups them into padded batches.
pub fn make_batches(examples: &[Example], batch_size: usize, seed: u64, eos: usize) -> Result<Vec<Batch>> {
    if examples.is_empty() {
        return Err(Error::Contract("no examples to batch".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    order
        .chunks(batch_size)
        .map(|chunk| {
            let items: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            pad_batch(&items, eos)
        })
        .collect()
}

fn pad_batch(items: &[&Example], eos: usize) -> Result<Batch> {
    let f = items[0].features.cols();
    if let Some(bad) = items.iter().find(|e| e.features.cols() != f) {
        return Err(Error::dim(format!(
            "clip `{}` has {} features, batch has {f}",
            bad.clip_id,
            bad.features.cols()
        )));
    }
    let t_max = items.iter().map(|e| e.features.rows()).max().unwrap_or(0);
    let s_max = items.iter().map(|e| e.targets.len()).max().unwrap_or(0);
    let mut features = Vec::with_capacity(items.len() * t_max * f);
    let mut valid_from = Vec::with_capacity(items.len());
    let mut targets = Vec::with_capacity(items.len() * s_max);
    let mut lengths = Vec::with_capacity(items.len());
    for e in items {
        let pad = t_max - e.features.rows();
        features.extend(std::iter::repeat_n(0.0, pad * f));
        features.extend_from_slice(e.features.data());
        valid_from.push(pad);
        targets.extend_from_slice(e.targets.indices());
        targets.extend(std::iter::repeat_n(eos, s_max - e.targets.len()));
        lengths.push(e.targets.len());
    }
    Ok(Batch {
        clip_ids: items.iter().map(|e| e.clip_id.clone()).collect(),
        features: Tensor::new(vec![items.len(), t_max, f], features)?,
        feature_valid_from: valid_from,
        targets,
        target_lengths: lengths,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub patience_epochs: usize,
    pub loss_round_digits: u32,
    /// Floor of the frequency-derived loss weights.
    pub beta_clamp: f64,
    pub seed: u64,
    pub max_epochs: usize,
    pub loss_mode: LossMode,
    /// Score only each caption's own positions instead of the full padded
    /// target row.
    pub mask_padded_targets: bool,
    /// Fraction of clips held out to drive early stopping; 0 monitors the
    /// training loss itself.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            patience_epochs: 100,
            loss_round_digits: 3,
            beta_clamp: 0.5,
            seed: 0,
            max_epochs: 10_000,
            loss_mode: LossMode::Categorical,
            mask_padded_targets: false,
            holdout_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience_epochs == 0 {
            return Err(Error::Config("patience_epochs must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout_fraction must be in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Rounds half away from zero to `digits` decimals.
pub fn round_loss(raw: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    (raw * scale).round() / scale
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over all examples of the epoch.
    pub raw_loss: f64,
    /// Loss on the held-out clips, when a holdout is configured.
    pub holdout_loss: Option<f64>,
    /// The monitored loss (holdout if present, training otherwise), rounded.
    pub rounded_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    NoImprovement { stale_epochs: usize },
    Stop,
}

/// Stops once the rounded loss has failed to strictly improve on the best
/// value for `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, rounded: f64) -> Progress {
        if self.best.is_none_or(|b| rounded < b) {
            self.best = Some(rounded);
            self.best_epoch = epoch;
            self.stale = 0;
            return Progress::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Progress::Stop
        } else {
            Progress::NoImprovement {
                stale_epochs: self.stale,
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_rounded_loss: f64,
    pub stopped_early: bool,
}

/// Owns the parameters and optimiser state of one training run.
pub struct Trainer {
    model: Seq2Seq,
    store: ParamStore,
    adam: AdamState,
    cfg: TrainConfig,
    eos: usize,
    best: ParamStore,
    last_good: ParamStore,
    records: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig, eos: usize) -> Result<Self> {
        cfg.validate()?;
        if eos >= model_cfg.vocab_size {
            return Err(Error::Config(format!(
                "eos index {eos} outside a vocabulary of {}",
                model_cfg.vocab_size
            )));
        }
        let (model, store) = Seq2Seq::init(model_cfg, cfg.seed)?;
        let adam = AdamState::new(cfg.adam(), &store);
        Ok(Trainer {
            model,
            best: store.clone(),
            last_good: store.clone(),
            store,
            adam,
            cfg,
            eos,
            records: Vec::new(),
        })
    }

    pub fn model(&self) -> &Seq2Seq {
        &self.model
    }

    /// Parameters of the epoch with the lowest rounded loss so far.
    pub fn best_params(&self) -> &ParamStore {
        &self.best
    }

    /// Parameters after the last fully completed epoch.
    pub fn last_params(&self) -> &ParamStore {
        &self.last_good
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    fn split_holdout(&self, examples: &[Example]) -> (Vec<Example>, Vec<Example>) {
        if self.cfg.holdout_fraction <= 0.0 {
            return (examples.to_vec(), Vec::new());
        }
        let mut clips: Vec<&str> = examples
            .iter()
            .map(|e| e.clip_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        clips.shuffle(&mut rng::seeded(rng::derive_seed(self.cfg.seed, &[u64::MAX])));
        let n_hold = ((clips.len() as f64 * self.cfg.holdout_fraction).ceil() as usize).min(clips.len() - 1);
        let held: BTreeSet<&str> = clips[..n_hold].iter().copied().collect();
        examples
            .iter()
            .cloned()
            .partition(|e| !held.contains(e.clip_id.as_str()))
    }

    fn holdout_loss(&self, holdout: &[Example], phi: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for e in holdout {
            total += self.model.forward_loss(
                self.store.values(),
                &e.features,
                e.targets.indices(),
                phi,
                self.cfg.loss_mode,
            )?;
        }
        Ok(total / holdout.len() as f64)
    }

    fn run_epoch(&mut self, epoch: usize, train: &[Example], phi: &[f64]) -> Result<f64> {
        let batches = make_batches(train, self.cfg.batch_size, self.cfg.seed.wrapping_add(epoch as u64), self.eos)?;
        let dropout_p = self.model.config().dropout_p;
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let scale = 1.0 / batch.len() as f64;
            for i in 0..batch.len() {
                let x = batch.item_features(i);
                if !x.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("non-finite features in clip `{}`", batch.clip_ids[i]),
                    });
                }
                let targets = if self.cfg.mask_padded_targets {
                    &batch.item_targets(i)[..batch.target_lengths[i]]
                } else {
                    batch.item_targets(i)
                };
                let dropout = (dropout_p > 0.0).then(|| DropoutSpec {
                    p: dropout_p,
                    seed: rng::derive_seed(self.cfg.seed, &[epoch as u64, b as u64, i as u64]),
                });
                let loss = self.model.loss_and_grad(
                    &mut self.store,
                    &x,
                    targets,
                    phi,
                    self.cfg.loss_mode,
                    dropout,
                    scale,
                )?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("non-finite loss on clip `{}`", batch.clip_ids[i]),
                    });
                }
                total += loss;
            }
            self.adam.step(&mut self.store).map_err(|e| match e {
                Error::NonFiniteGradient(name) => Error::Divergence {
                    epoch,
                    detail: format!("non-finite gradient in `{name}`"),
                },
                other => other,
            })?;
            if let Some((name, _, _)) = self.store.iter().find(|(_, v, _)| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("parameter `{name}` overflowed"),
                });
            }
        }
        Ok(total / train.len() as f64)
    }

    /// Trains until early stopping or `max_epochs`. On divergence the error
    /// is returned and [`Self::last_params`] still holds the last completed
    /// epoch.
    pub fn run(
        &mut self,
        examples: &[Example],
        weights: &WeightTable,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainSummary> {
        if examples.is_empty() {
            return Err(Error::Contract("no training examples".into()));
        }
        let phi = &weights.phi;
        let (train, holdout) = self.split_holdout(examples);
        let min_len = self.model.config().min_input_length();
        if let Some(short) = train.iter().chain(&holdout).find(|e| e.features.rows() < min_len) {
            // Padding lifts short clips inside a batch, but only if a longer
            // clip shares it; refuse up front instead.
            return Err(Error::SequenceTooShort {
                len: short.features.rows(),
                factor: self.model.config().subsample_factor,
            });
        }
        let mut stopper = EarlyStopping::new(self.cfg.patience_epochs);
        let mut stopped_early = false;
        for epoch in 0..self.cfg.max_epochs {
            let start = Instant::now();
            let raw = self.run_epoch(epoch, &train, phi)?;
            let holdout_loss = if holdout.is_empty() {
                None
            } else {
                Some(self.holdout_loss(&holdout, phi)?)
            };
            let rounded = round_loss(holdout_loss.unwrap_or(raw), self.cfg.loss_round_digits);
            let record = EpochRecord {
                epoch,
                raw_loss: raw,
                holdout_loss,
                rounded_loss: rounded,
                seconds: start.elapsed().as_secs_f64(),
            };
            self.last_good.clone_from(&self.store);
            let progress = stopper.observe(epoch, rounded);
            if progress == Progress::Improved {
                self.best.clone_from(&self.store);
            }
            on_epoch(&record);
            self.records.push(record);
            if progress == Progress::Stop {
                stopped_early = true;
                info!(
                    "early stop after epoch {epoch}: best rounded loss {:.3} at epoch {}",
                    stopper.best().unwrap_or(f64::NAN),
                    stopper.best_epoch()
                );
                break;
            }
        }
        Ok(TrainSummary {
            records: self.records.clone(),
            best_epoch: stopper.best_epoch(),
            best_rounded_loss: stopper.best().unwrap_or(f64::NAN),
            stopped_early,
        })
    }
}

/// Result of [`train`]: the network layout and the best and final parameters.
pub struct TrainOutcome {
    pub model: Seq2Seq,
    pub best: ParamStore,
    pub last: ParamStore,
    pub summary: TrainSummary,
}

pub fn train(
    examples: &[Example],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    weights: &WeightTable,
    eos: usize,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model_cfg, train_cfg, eos)?;
    let summary = trainer.run(examples, weights, |_| {})?;
    Ok(TrainOutcome {
        model: trainer.model.clone(),
        best: trainer.best,
        last: trainer.last_good,
        summary,
    })
}

/// A decoded caption for one clip, without the trailing `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub file_name: String,
    pub tokens: Vec<usize>,
}

/// Greedy-decodes every clip once, without dropout. Clips too short to
/// survive sub-sampling are skipped with a warning.
pub fn evaluate_split(
    clips: &[(String, Arc<Tensor>)],
    model: &Seq2Seq,
    params: &ParamStore,
    eos: usize,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(clips.len());
    for (name, features) in clips {
        if model.config().final_length(features.rows()).is_none() {
            warn!(
                "skipping `{name}`: {} frames cannot pass {} sub-sampling stages of factor {}",
                features.rows(),
                model.config().layers - 1,
                model.config().subsample_factor
            );
            continue;
        }
        let mut tokens = model.caption(params.values(), features, eos)?;
        tokens.retain(|&t| t != eos);
        out.push(Prediction {
            file_name: name.clone(),
            tokens,
        });
    }
    Ok(out)
}

/// `epoch,raw_loss,rounded_loss,seconds` (plus `holdout_loss` when present).
pub fn write_epochs_csv(path: impl AsRef<Path>, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let holdout = records.iter().any(|r| r.holdout_loss.is_some());
    let mut header = vec!["epoch", "raw_loss", "rounded_loss", "seconds"];
    if holdout {
        header.push("holdout_loss");
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.epoch.to_string(),
            format!("{}", r.raw_loss),
            format!("{:.*}", 3, r.rounded_loss),
            format!("{:.3}", r.seconds),
        ];
        if holdout {
            row.push(r.holdout_loss.map(|h| h.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `file_name,caption_predicted`.
pub fn write_predictions_csv(path: impl AsRef<Path>, rows: &[(String, String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["file_name", "caption_predicted"])?;
    for (name, caption) in rows {
        w.write_record([name, caption])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().map(str::trim).ne(["file_name", "caption_predicted"]) {
        return Err(Error::format("predictions", "expected header `file_name,caption_predicted`"));
    }
    r.records()
        .map(|row| {
            let row = row?;
            Ok((
                row.get(0).unwrap_or_default().to_string(),
                row.get(1).unwrap_or_default().to_string(),
            ))
        })
        .collect()
}

pub mod fixtures;
