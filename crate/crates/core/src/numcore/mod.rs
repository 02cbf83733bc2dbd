//! Deterministic numeric building blocks shared by every other module.
//!
//! All arithmetic is carried out in `f64`. Kernels are pure functions over
//! slices; parameters and their gradient buffers live in a [`ParamStore`].

mod adam;
mod dropout;
mod gradcheck;
mod ops;
mod params;
pub mod rng;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use dropout::{dropout, DropoutMask};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{
    affine, affine_backward, argmax, gemm, gemm_a_bt, gemm_at_b, sigmoid, softmax,
    softmax_in_place, weighted_cross_entropy, weighted_cross_entropy_logit_grad, AffineGrads,
    LossMode, PROB_CLAMP,
};
pub use params::{GradBuffers, ParamId, ParamStore, ParamValues};
pub use tensor::Tensor;
