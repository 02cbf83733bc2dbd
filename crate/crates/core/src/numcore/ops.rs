use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

/// `out[n×m] += a[n×k] · b[k×m]`
pub fn gemm(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            for (o, &b_pj) in out_row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// `out[k×m] += aᵀ · b` with `a[n×k]`, `b[n×m]`.
pub fn gemm_at_b(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    debug_assert_eq!(out.len(), k * m);
    for i in 0..n {
        let b_row = &b[i * m..(i + 1) * m];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            for (o, &b_ij) in out[p * m..(p + 1) * m].iter_mut().zip(b_row) {
                *o += a_ip * b_ij;
            }
        }
    }
}

/// `out[n×k] += a · bᵀ` with `a[n×m]`, `b[k×m]`.
pub fn gemm_a_bt(a: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, k: usize) {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * k);
    for i in 0..n {
        let a_row = &a[i * m..(i + 1) * m];
        for (p, o) in out[i * k..(i + 1) * k].iter_mut().enumerate() {
            *o += dot(a_row, &b[p * m..(p + 1) * m]);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x · W + b` for `x[N×I]`, `W[I×O]`, `b[O]`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || b.rank() != 1 || x.rank() > 2 {
        return Err(Error::dim(format!(
            "affine expects x[N×I], W[I×O], b[O]; got x{:?}, W{:?}, b{:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (n, i, o) = (x.rows(), x.cols(), w.shape()[1]);
    if w.shape()[0] != i || b.len() != o {
        return Err(Error::dim(format!(
            "affine: x{:?} · W{:?} + b{:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(b.data());
    }
    gemm(x.data(), w.data(), &mut out, n, i, o);
    Tensor::matrix(n, o, out)
}

/// Gradients of `affine` given the upstream gradient `dy[N×O]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn affine_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<AffineGrads> {
    let (n, i, o) = (x.rows(), x.cols(), w.shape()[1]);
    if dy.rows() != n || dy.cols() != o || w.shape()[0] != i {
        return Err(Error::dim(format!(
            "affine_backward: x{:?}, W{:?}, dy{:?}",
            x.shape(),
            w.shape(),
            dy.shape()
        )));
    }
    let mut dx = vec![0.0; n * i];
    gemm_a_bt(dy.data(), w.data(), &mut dx, n, o, i);
    let mut dw = vec![0.0; i * o];
    gemm_at_b(x.data(), dy.data(), &mut dw, n, i, o);
    let mut db = vec![0.0; o];
    for row in dy.data().chunks(o) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(AffineGrads {
        dx: Tensor::matrix(n, i, dx)?,
        dw: Tensor::matrix(i, o, dw)?,
        db: Tensor::vector(db),
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.is_empty() {
        return Err(Error::dim("softmax of an empty vector"));
    }
    let mut out = v.data().to_vec();
    softmax_in_place(&mut out);
    Ok(Tensor::vector(out))
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// How the per-step classification loss is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `-log ŷ[y]`.
    #[default]
    Categorical,
    /// `-Σ_d [y_d log ŷ_d + (1 - y_d) log(1 - ŷ_d)]` against the one-hot target.
    Binary,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_distribution(yhat: &[f64], target: usize, phi: f64) -> Result<()> {
    if target >= yhat.len() {
        return Err(Error::Contract(format!(
            "target index {target} out of range for {} classes",
            yhat.len()
        )));
    }
    let sum: f64 = yhat.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || yhat.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Contract(format!(
            "not a probability vector (sum {sum})"
        )));
    }
    if phi.is_nan() || phi <= 0.0 {
        return Err(Error::Contract(format!("loss weight must be positive, got {phi}")));
    }
    Ok(())
}

/// `phi` times the cross-entropy between `yhat` and the one-hot vector at `target`.
pub fn weighted_cross_entropy(yhat: &[f64], target: usize, phi: f64, mode: LossMode) -> Result<f64> {
    check_distribution(yhat, target, phi)?;
    let loss = match mode {
        LossMode::Categorical => -clamp_prob(yhat[target]).ln(),
        LossMode::Binary => yhat
            .iter()
            .enumerate()
            .map(|(d, &p)| {
                let p = clamp_prob(p);
                if d == target {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum(),
    };
    Ok(phi * loss)
}

/// Gradient of [`weighted_cross_entropy`] with respect to the pre-softmax
/// logits, where `yhat = softmax(logits)`. Coordinates sitting on the clamp
/// have zero derivative.
pub fn weighted_cross_entropy_logit_grad(
    yhat: &[f64],
    target: usize,
    phi: f64,
    mode: LossMode,
) -> Vec<f64> {
    let inside = |p: f64| p > PROB_CLAMP && p < 1.0 - PROB_CLAMP;
    match mode {
        LossMode::Categorical => {
            if !inside(yhat[target]) {
                return vec![0.0; yhat.len()];
            }
            yhat.iter()
                .enumerate()
                .map(|(j, &p)| phi * (p - if j == target { 1.0 } else { 0.0 }))
                .collect()
        }
        LossMode::Binary => {
            // dL/dp_d, then through the softmax Jacobian.
            let g: Vec<f64> = yhat
                .iter()
                .enumerate()
                .map(|(d, &p)| match (inside(p), d == target) {
                    (false, _) => 0.0,
                    (true, true) => -phi / p,
                    (true, false) => phi / (1.0 - p),
                })
                .collect();
            let gp: f64 = g.iter().zip(yhat).map(|(a, b)| a * b).sum();
            yhat.iter().zip(&g).map(|(&p, &gj)| p * (gj - gp)).collect()
        }
    }
}
