//! The captioning network: an L-layer bi-directional GRU encoder with
//! temporal sub-sampling and residual connections between layers, a GRU
//! decoder that reads the same context vector at every step, and a softmax
//! classifier.

mod checkpoint;
mod encoder;
mod gru;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, read_checkpoint_config, save_checkpoint, write_checkpoint};
pub use encoder::{bidir_layer, subsample, subsample_backward, BiGru, HiddenSequence};
pub use gru::{gru_backward, gru_forward, gru_step, Gru, GruGrads, GruTrace, GruWeights};

use crate::error::{Error, Result};
use crate::numcore::{
    affine, argmax, gemm, gemm_a_bt, gemm_at_b, rng, softmax_in_place, weighted_cross_entropy,
    weighted_cross_entropy_logit_grad, DropoutMask, LossMode, ParamId, ParamStore, ParamValues,
    Tensor,
};

/// Sub-sampling factors evaluated in the original experiments.
pub const REFERENCE_FACTORS: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of bi-directional encoder layers (L).
    pub layers: usize,
    /// Hidden size of each encoder direction (Ξ).
    pub encoder_hidden: usize,
    /// Decoder hidden size (Ψ).
    pub decoder_hidden: usize,
    /// Temporal sub-sampling factor between encoder layers (M).
    pub subsample_factor: usize,
    /// Input feature count (F).
    pub input_features: usize,
    /// Output vocabulary size (D).
    pub vocab_size: usize,
    pub dropout_p: f64,
    pub max_decode_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 3,
            encoder_hidden: 256,
            decoder_hidden: 256,
            subsample_factor: 1,
            input_features: 64,
            vocab_size: 4366,
            dropout_p: 0.25,
            max_decode_steps: 22,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::Config(format!("need at least 2 encoder layers, got {}", self.layers)));
        }
        let sizes = [
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("subsample_factor", self.subsample_factor),
            ("input_features", self.input_features),
            ("vocab_size", self.vocab_size),
            ("max_decode_steps", self.max_decode_steps),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        if !REFERENCE_FACTORS.contains(&self.subsample_factor) {
            warn!(
                "sub-sampling factor {} is outside the reference grid {:?}",
                self.subsample_factor, REFERENCE_FACTORS
            );
        }
        Ok(())
    }

    /// Width Δ of every encoder layer output.
    pub fn context_width(&self) -> usize {
        2 * self.encoder_hidden
    }

    /// Encoder output length for an input of `t` frames, or `None` if some
    /// stage would be left with no steps.
    pub fn final_length(&self, t: usize) -> Option<usize> {
        final_length(t, self.subsample_factor, self.layers)
    }

    /// Shortest input that survives every sub-sampling stage.
    pub fn min_input_length(&self) -> usize {
        self.subsample_factor.pow((self.layers - 1) as u32)
    }
}

/// `⌊…⌊t/M⌋…/M⌋` applied `layers - 1` times; `None` once a stage hits zero.
pub fn final_length(t: usize, factor: usize, layers: usize) -> Option<usize> {
    if t == 0 || factor == 0 {
        return None;
    }
    let mut len = t;
    for _ in 1..layers {
        len /= factor;
        if len == 0 {
            return None;
        }
    }
    Some(len)
}

/// Total scalar parameter count implied by a configuration.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let xi = cfg.encoder_hidden;
    let first = 2 * Gru::num_params(cfg.input_features, xi);
    let rest = (cfg.layers - 1) * 2 * Gru::num_params(2 * xi, xi);
    let decoder = Gru::num_params(2 * xi, cfg.decoder_hidden);
    let classifier = cfg.decoder_hidden * cfg.vocab_size + cfg.vocab_size;
    first + rest + decoder + classifier
}

/// Dropout applied to the sub-sampled input of every encoder layer after the
/// first, with one independent mask per layer derived from `seed`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub p: f64,
    pub seed: u64,
}

struct LayerTrace {
    /// Sub-sampled input H''_{l-1}, for layers after the first.
    residual: Option<Tensor>,
    mask: Option<DropoutMask>,
    input_len: usize,
    cell: encoder::BiGruTrace,
}

/// Intermediate values of one encoder pass.
pub struct EncoderTrace {
    layers: Vec<LayerTrace>,
    outputs: Vec<HiddenSequence>,
}

impl EncoderTrace {
    /// The context vector z: last step of the final layer's output.
    pub fn context(&self) -> &[f64] {
        let last = &self.outputs.last().expect("at least one layer").data;
        last.row(last.rows() - 1)
    }

    pub fn final_length(&self) -> usize {
        self.outputs.last().map_or(0, |h| h.data.rows())
    }

    pub fn outputs(&self) -> &[HiddenSequence] {
        &self.outputs
    }
}

/// Decoder recurrent state u_s; `step` counts completed steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub u: Vec<f64>,
    pub step: usize,
}

impl DecoderState {
    pub fn initial(hidden: usize) -> Self {
        DecoderState {
            u: vec![0.0; hidden],
            step: 0,
        }
    }
}

/// Parameter layout of the full network; the values live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq {
    cfg: ModelConfig,
    encoder: Vec<BiGru>,
    decoder: Gru,
    classifier_w: ParamId,
    classifier_b: ParamId,
}

impl Seq2Seq {
    /// Creates a freshly initialised network. GRU weights are uniform in
    /// `±1/sqrt(hidden)`, classifier weights in `±1/sqrt(Ψ)`.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut rng = rng::seeded(seed);
        let mut store = ParamStore::new();
        let xi = cfg.encoder_hidden;
        let mut encoder = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let input = if l == 0 { cfg.input_features } else { 2 * xi };
            encoder.push(BiGru {
                forward: Gru::register(&mut store, &format!("encoder.{l}.forward"), input, xi, &mut rng)?,
                backward: Gru::register(&mut store, &format!("encoder.{l}.backward"), input, xi, &mut rng)?,
            });
        }
        let decoder = Gru::register(&mut store, "decoder", 2 * xi, cfg.decoder_hidden, &mut rng)?;
        let bound = 1.0 / (cfg.decoder_hidden as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let classifier_w = store.insert(
            "classifier.weight",
            Tensor::matrix(cfg.decoder_hidden, cfg.vocab_size, uniform(cfg.decoder_hidden * cfg.vocab_size))?,
        )?;
        let classifier_b = store.insert("classifier.bias", Tensor::vector(uniform(cfg.vocab_size)))?;
        Ok((
            Seq2Seq {
                cfg,
                encoder,
                decoder,
                classifier_w,
                classifier_b,
            },
            store,
        ))
    }

    /// Binds to an existing store, checking every name and shape.
    pub fn bind(cfg: ModelConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let xi = cfg.encoder_hidden;
        let mut encoder = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let input = if l == 0 { cfg.input_features } else { 2 * xi };
            encoder.push(BiGru {
                forward: Gru::locate(store, &format!("encoder.{l}.forward"), input, xi)?,
                backward: Gru::locate(store, &format!("encoder.{l}.backward"), input, xi)?,
            });
        }
        let decoder = Gru::locate(store, "decoder", 2 * xi, cfg.decoder_hidden)?;
        let find = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = store
                .id(name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing parameter `{name}`")))?;
            if store.value(id).shape() != shape {
                return Err(Error::dim(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    store.value(id).shape()
                )));
            }
            Ok(id)
        };
        let classifier_w = find("classifier.weight", &[cfg.decoder_hidden, cfg.vocab_size])?;
        let classifier_b = find("classifier.bias", &[cfg.vocab_size])?;
        let expected = param_count(&cfg);
        if store.num_elements() != expected {
            return Err(Error::format(
                "checkpoint",
                format!("{} parameters stored, configuration implies {expected}", store.num_elements()),
            ));
        }
        Ok(Seq2Seq {
            cfg,
            encoder,
            decoder,
            classifier_w,
            classifier_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn encoder_layers(&self) -> &[BiGru] {
        &self.encoder
    }

    pub fn decoder(&self) -> &Gru {
        &self.decoder
    }

    /// Runs the encoder. With `dropout` set, each layer after the first sees
    /// a dropped-out copy of its sub-sampled input; the residual branch
    /// always carries the undropped copy.
    pub fn encode(&self, values: &ParamValues, x: &Tensor, dropout: Option<DropoutSpec>) -> Result<EncoderTrace> {
        if x.rank() != 2 || x.cols() != self.cfg.input_features {
            return Err(Error::dim(format!(
                "encoder expects T×{} features, got {:?}",
                self.cfg.input_features,
                x.shape()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::dim("empty feature sequence"));
        }
        let mut layers = Vec::with_capacity(self.cfg.layers);
        let mut outputs: Vec<HiddenSequence> = Vec::with_capacity(self.cfg.layers);
        let (h1, cell) = self.encoder[0].forward(values, x);
        layers.push(LayerTrace {
            residual: None,
            mask: None,
            input_len: x.rows(),
            cell,
        });
        outputs.push(HiddenSequence { data: h1, layer_index: 1 });

        for (l, layer) in self.encoder.iter().enumerate().skip(1) {
            let prev = &outputs[l - 1].data;
            let sub = subsample(prev, self.cfg.subsample_factor)?;
            let mut dropped = sub.clone();
            let mask = match dropout {
                Some(spec) if spec.p > 0.0 => {
                    let m = DropoutMask::sample(sub.len(), spec.p, rng::derive_seed(spec.seed, &[l as u64]))?;
                    m.apply(dropped.data_mut());
                    Some(m)
                }
                _ => None,
            };
            let (mut h, cell) = layer.forward(values, &dropped);
            h.add_assign(&sub)?;
            layers.push(LayerTrace {
                residual: Some(sub),
                mask,
                input_len: prev.rows(),
                cell,
            });
            outputs.push(HiddenSequence {
                data: h,
                layer_index: l + 1,
            });
        }
        Ok(EncoderTrace { layers, outputs })
    }

    /// Context vector for inference (no dropout).
    pub fn context(&self, values: &ParamValues, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.encode(values, x, None)?.context().to_vec())
    }

    fn check_context(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.cfg.context_width() {
            return Err(Error::dim(format!(
                "context has {} entries, expected {}",
                z.len(),
                self.cfg.context_width()
            )));
        }
        Ok(())
    }

    fn classify(&self, values: &ParamValues, u: &[f64]) -> Vec<f64> {
        let w = &values[self.classifier_w];
        let mut logits = values[self.classifier_b].data().to_vec();
        gemm(u, w.data(), &mut logits, 1, self.cfg.decoder_hidden, self.cfg.vocab_size);
        softmax_in_place(&mut logits);
        logits
    }

    /// One decoder step: `u_s = GRU(z, u_{s-1})`, `ŷ_s = softmax(u_s·W + b)`.
    pub fn decode_step(&self, values: &ParamValues, z: &[f64], state: &DecoderState) -> Result<(Vec<f64>, DecoderState)> {
        self.check_context(z)?;
        if state.step >= self.cfg.max_decode_steps {
            return Err(Error::Contract(format!(
                "decoder already ran {} of {} steps",
                state.step, self.cfg.max_decode_steps
            )));
        }
        let u = gru_step(z, &state.u, &self.decoder.weights(values))?;
        let probs = self.classify(values, &u);
        Ok((probs, DecoderState { u, step: state.step + 1 }))
    }

    /// Emits the arg-max word at every step until `eos` or the step cap; a
    /// capped sequence gets `eos` appended.
    pub fn greedy_decode(&self, values: &ParamValues, z: &[f64], eos: usize) -> Result<Vec<usize>> {
        let mut state = DecoderState::initial(self.cfg.decoder_hidden);
        let mut out = Vec::new();
        while state.step < self.cfg.max_decode_steps {
            let (probs, next) = self.decode_step(values, z, &state)?;
            let token = argmax(&probs);
            out.push(token);
            if token == eos {
                return Ok(out);
            }
            state = next;
        }
        out.push(eos);
        Ok(out)
    }

    /// Encodes `x` and greedily decodes a caption.
    pub fn caption(&self, values: &ParamValues, x: &Tensor, eos: usize) -> Result<Vec<usize>> {
        let z = self.context(values, x)?;
        self.greedy_decode(values, &z, eos)
    }

    fn check_targets(&self, targets: &[usize], phi: &[f64]) -> Result<()> {
        if targets.is_empty() {
            return Err(Error::Contract("empty target sequence".into()));
        }
        if phi.len() != self.cfg.vocab_size {
            return Err(Error::dim(format!(
                "{} loss weights for a vocabulary of {}",
                phi.len(),
                self.cfg.vocab_size
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::Contract(format!("target index {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Decoder outputs for `steps` steps from context `z`: the GRU trace and
    /// the `steps × D` probabilities.
    fn decode_teacher_free(&self, values: &ParamValues, z: &[f64], steps: usize) -> Result<(GruTrace, Tensor)> {
        let mut repeated = Vec::with_capacity(steps * z.len());
        for _ in 0..steps {
            repeated.extend_from_slice(z);
        }
        let input = Tensor::matrix(steps, z.len(), repeated)?;
        let trace = self.decoder.forward(values, &input);
        let mut probs = affine(&trace.outputs(), &values[self.classifier_w], &values[self.classifier_b])?;
        for s in 0..steps {
            softmax_in_place(probs.row_mut(s));
        }
        Ok((trace, probs))
    }

    /// Mean over the `S = targets.len()` steps of `phi[y_s] · CE(ŷ_s, y_s)`.
    pub fn forward_loss(
        &self,
        values: &ParamValues,
        x: &Tensor,
        targets: &[usize],
        phi: &[f64],
        mode: LossMode,
    ) -> Result<f64> {
        self.check_targets(targets, phi)?;
        let enc = self.encode(values, x, None)?;
        let (_, probs) = self.decode_teacher_free(values, enc.context(), targets.len())?;
        sequence_loss(&probs, targets, phi, mode)
    }

    /// Same loss as [`Self::forward_loss`] (optionally with dropout), adding
    /// `scale` times its gradient into the store's gradient buffers.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad(
        &self,
        store: &mut ParamStore,
        x: &Tensor,
        targets: &[usize],
        phi: &[f64],
        mode: LossMode,
        dropout: Option<DropoutSpec>,
        scale: f64,
    ) -> Result<f64> {
        self.check_targets(targets, phi)?;
        let (values, grads) = store.split_mut();
        let enc = self.encode(values, x, dropout)?;
        let steps = targets.len();
        let (dec_trace, probs) = self.decode_teacher_free(values, enc.context(), steps)?;
        let loss = sequence_loss(&probs, targets, phi, mode)?;

        // Classifier.
        let (psi, d) = (self.cfg.decoder_hidden, self.cfg.vocab_size);
        let mut d_logits = Vec::with_capacity(steps * d);
        for (s, &y) in targets.iter().enumerate() {
            let g = weighted_cross_entropy_logit_grad(probs.row(s), y, phi[y] * scale / steps as f64, mode);
            d_logits.extend(g);
        }
        let u = dec_trace.outputs();
        gemm_at_b(u.data(), &d_logits, grads[self.classifier_w].data_mut(), steps, psi, d);
        for row in d_logits.chunks(d) {
            for (b, g) in grads[self.classifier_b].data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut d_u = vec![0.0; steps * psi];
        gemm_a_bt(&d_logits, values[self.classifier_w].data(), &mut d_u, steps, d, psi);

        // Decoder: the context feeds every step.
        let d_inputs = self.decoder.backward(values, grads, &dec_trace, &d_u);
        let width = self.cfg.context_width();
        let mut d_z = vec![0.0; width];
        for row in d_inputs.chunks(width) {
            for (a, b) in d_z.iter_mut().zip(row) {
                *a += b;
            }
        }

        // Encoder, last layer first.
        let last_len = enc.final_length();
        let mut d_h = Tensor::zeros(&[last_len, width]);
        d_h.row_mut(last_len - 1).copy_from_slice(&d_z);
        for (l, trace) in enc.layers.iter().enumerate().rev() {
            let mut d_in = self.encoder[l].backward(values, grads, &trace.cell, &d_h);
            if trace.residual.is_none() {
                break;
            }
            if let Some(mask) = &trace.mask {
                mask.apply(d_in.data_mut());
            }
            d_in.add_assign(&d_h)?;
            d_h = subsample_backward(&d_in, trace.input_len, self.cfg.subsample_factor);
        }
        Ok(loss)
    }
}

fn sequence_loss(probs: &Tensor, targets: &[usize], phi: &[f64], mode: LossMode) -> Result<f64> {
    let mut total = 0.0;
    for (s, &y) in targets.iter().enumerate() {
        total += weighted_cross_entropy(probs.row(s), y, phi[y], mode)?;
    }
    Ok(total / targets.len() as f64)
}
