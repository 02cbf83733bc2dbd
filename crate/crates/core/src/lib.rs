//! Sequence-to-sequence audio captioning with temporal sub-sampling between
//! the recurrent layers of the encoder.
//!
//! The crate is organised bottom-up:
//!
//! * [`numcore`]: tensors, parameter storage, Adam, dropout, losses and a
//!   finite-difference gradient checker.
//! * [`features`]: WAV decoding and log mel-band energy extraction.
//! * [`textproc`]: caption normalisation, vocabulary and loss weights.
//! * [`model`]: the bi-directional GRU encoder with sub-sampling and residual
//!   connections, the fixed-context GRU decoder and the classifier.
//! * [`training`]: batching, the optimisation loop with early stopping and
//!   checkpoints.
//! * [`metrics`]: BLEU, ROUGE-L, CIDEr-D and SPIDEr.
//! * [`report`]: sequence-length reduction tables and inference timing.

pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod report;
pub mod textproc;
pub mod training;

pub use error::{Error, Result};
pub use features::{AudioClip, FeatureExtractionConfig, FeatureSequence};
pub use metrics::{EvaluationItem, MetricsReport};
pub use model::{ModelConfig, Seq2Seq};
pub use numcore::{AdamConfig, AdamState, LossMode, ParamId, ParamStore, Tensor};


pub use textproc::{TokenSequence, Vocabulary, WeightTable};
pub use training::{EpochRecord, TrainConfig};
