use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{gemm, gemm_a_bt, gemm_at_b, rng, sigmoid, GradBuffers, ParamId, ParamStore, ParamValues, Tensor};

/// Borrowed gated-recurrent-unit weights.
///
/// Gates are packed in `[reset | update | candidate]` order along the last
/// axis: `w_ih` is `I × 3H`, `w_hh` is `H × 3H` and each bias has `3H`
/// entries. The cell computes
///
/// ```text
/// r  = σ(x·W_ir + b_ir + h·W_hr + b_hr)
/// u  = σ(x·W_iu + b_iu + h·W_hu + b_hu)
/// n  = tanh(x·W_in + b_in + r ⊙ (h·W_hn + b_hn))
/// h' = (1 - u) ⊙ n + u ⊙ h
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruWeights<'a> {
    pub w_ih: &'a Tensor,
    pub w_hh: &'a Tensor,
    pub b_ih: &'a Tensor,
    pub b_hh: &'a Tensor,
}

impl GruWeights<'_> {
    pub fn input_size(&self) -> usize {
        self.w_ih.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.rows()
    }

    fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_size(), self.hidden_size());
        let ok = self.w_ih.shape() == [i, 3 * h]
            && self.w_hh.shape() == [h, 3 * h]
            && self.b_ih.shape() == [3 * h]
            && self.b_hh.shape() == [3 * h];
        if ok {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "inconsistent GRU weights: w_ih{:?} w_hh{:?} b_ih{:?} b_hh{:?}",
                self.w_ih.shape(),
                self.w_hh.shape(),
                self.b_ih.shape(),
                self.b_hh.shape()
            )))
        }
    }
}

/// One GRU update from `h_prev` given input `x`.
pub fn gru_step(x: &[f64], h_prev: &[f64], p: &GruWeights) -> Result<Vec<f64>> {
    p.validate()?;
    let (i, h) = (p.input_size(), p.hidden_size());
    if x.len() != i || h_prev.len() != h {
        return Err(Error::dim(format!(
            "gru_step: x has {} entries (expected {i}), h_prev has {} (expected {h})",
            x.len(),
            h_prev.len()
        )));
    }
    let input = Tensor::matrix(1, i, x.to_vec())?;
    let trace = forward_from(p, &input, h_prev);
    Ok(trace.output_row(0).to_vec())
}

/// Everything the backward pass needs from a forward run over a sequence.
#[derive(Clone, Debug)]
pub struct GruTrace {
    input: Tensor,
    hidden: usize,
    /// `(T + 1) × H`; row 0 is the initial state.
    states: Vec<f64>,
    reset: Vec<f64>,
    update: Vec<f64>,
    candidate: Vec<f64>,
    /// `h·W_hn + b_hn`, the recurrent candidate term before reset gating.
    recurrent_candidate: Vec<f64>,
}

impl GruTrace {
    pub fn len(&self) -> usize {
        self.input.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hidden state after step `t` (0-based).
    pub fn output_row(&self, t: usize) -> &[f64] {
        &self.states[(t + 1) * self.hidden..(t + 2) * self.hidden]
    }

    /// All outputs as a `T × H` matrix.
    pub fn outputs(&self) -> Tensor {
        Tensor::matrix(self.len(), self.hidden, self.states[self.hidden..].to_vec())
            .expect("consistent trace")
    }
}

/// Runs the cell over every row of `input` (`T × I`) from a zero state.
pub fn gru_forward(p: &GruWeights, input: &Tensor) -> GruTrace {
    let h0 = vec![0.0; p.hidden_size()];
    forward_from(p, input, &h0)
}

fn forward_from(p: &GruWeights, input: &Tensor, h0: &[f64]) -> GruTrace {
    let (t_len, i, h) = (input.rows(), p.input_size(), p.hidden_size());
    debug_assert_eq!(input.cols(), i);
    // Input projections for all steps at once.
    let mut gi = Vec::with_capacity(t_len * 3 * h);
    for _ in 0..t_len {
        gi.extend_from_slice(p.b_ih.data());
    }
    gemm(input.data(), p.w_ih.data(), &mut gi, t_len, i, 3 * h);

    let mut states = Vec::with_capacity((t_len + 1) * h);
    states.extend_from_slice(h0);
    let mut reset = vec![0.0; t_len * h];
    let mut update = vec![0.0; t_len * h];
    let mut candidate = vec![0.0; t_len * h];
    let mut recurrent_candidate = vec![0.0; t_len * h];
    let mut gh = vec![0.0; 3 * h];
    for t in 0..t_len {
        let prev = states[t * h..(t + 1) * h].to_vec();
        gh.copy_from_slice(p.b_hh.data());
        gemm(&prev, p.w_hh.data(), &mut gh, 1, h, 3 * h);
        let gi_t = &gi[t * 3 * h..(t + 1) * 3 * h];
        for k in 0..h {
            let r = sigmoid(gi_t[k] + gh[k]);
            let u = sigmoid(gi_t[h + k] + gh[h + k]);
            let n = (gi_t[2 * h + k] + r * gh[2 * h + k]).tanh();
            reset[t * h + k] = r;
            update[t * h + k] = u;
            candidate[t * h + k] = n;
            recurrent_candidate[t * h + k] = gh[2 * h + k];
            states.push((1.0 - u) * n + u * prev[k]);
        }
    }
    GruTrace {
        input: input.clone(),
        hidden: h,
        states,
        reset,
        update,
        candidate,
        recurrent_candidate,
    }
}

/// Gradients of one GRU's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GruGrads {
    pub w_ih: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

/// Backpropagation through time. `d_outputs` is the `T × H` gradient of the
/// loss with respect to every output state. Returns the gradient with
/// respect to the input sequence and adds parameter gradients into `grads`.
pub fn gru_backward(p: &GruWeights, trace: &GruTrace, d_outputs: &[f64], grads: &mut GruGrads) -> Vec<f64> {
    let (t_len, i, h) = (trace.len(), p.input_size(), p.hidden_size());
    debug_assert_eq!(d_outputs.len(), t_len * h);
    let mut d_gi = vec![0.0; t_len * 3 * h];
    let mut d_gh = vec![0.0; 3 * h];
    let mut dh_next = vec![0.0; h];
    for t in (0..t_len).rev() {
        let prev = &trace.states[t * h..(t + 1) * h];
        let row = t * h..(t + 1) * h;
        let (r, u, n, hn) = (
            &trace.reset[row.clone()],
            &trace.update[row.clone()],
            &trace.candidate[row.clone()],
            &trace.recurrent_candidate[row],
        );
        let d_gi_t = &mut d_gi[t * 3 * h..(t + 1) * 3 * h];
        let mut dh_prev = vec![0.0; h];
        for k in 0..h {
            let dh = d_outputs[t * h + k] + dh_next[k];
            let dn = dh * (1.0 - u[k]);
            let du = dh * (prev[k] - n[k]);
            dh_prev[k] = dh * u[k];
            let dn_pre = dn * (1.0 - n[k] * n[k]);
            let dr = dn_pre * hn[k];
            let dr_pre = dr * r[k] * (1.0 - r[k]);
            let du_pre = du * u[k] * (1.0 - u[k]);
            d_gi_t[k] = dr_pre;
            d_gi_t[h + k] = du_pre;
            d_gi_t[2 * h + k] = dn_pre;
            d_gh[k] = dr_pre;
            d_gh[h + k] = du_pre;
            d_gh[2 * h + k] = dn_pre * r[k];
        }
        gemm_at_b(prev, &d_gh, &mut grads.w_hh, 1, h, 3 * h);
        for (b, g) in grads.b_hh.iter_mut().zip(&d_gh) {
            *b += g;
        }
        gemm_a_bt(&d_gh, p.w_hh.data(), &mut dh_prev, 1, 3 * h, h);
        dh_next = dh_prev;
    }
    gemm_at_b(trace.input.data(), &d_gi, &mut grads.w_ih, t_len, i, 3 * h);
    for row in d_gi.chunks(3 * h) {
        for (b, g) in grads.b_ih.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut d_input = vec![0.0; t_len * i];
    gemm_a_bt(&d_gi, p.w_ih.data(), &mut d_input, t_len, 3 * h, i);
    d_input
}

/// Handles to one GRU's parameters inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gru {
    pub input_size: usize,
    pub hidden_size: usize,
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
}

const GRU_TENSORS: [&str; 4] = ["w_ih", "w_hh", "b_ih", "b_hh"];

impl Gru {
    fn shapes(input: usize, hidden: usize) -> [Vec<usize>; 4] {
        [
            vec![input, 3 * hidden],
            vec![hidden, 3 * hidden],
            vec![3 * hidden],
            vec![3 * hidden],
        ]
    }

    /// Number of scalar parameters of a GRU with two bias vectors per gate.
    pub fn num_params(input: usize, hidden: usize) -> usize {
        3 * hidden * (input + hidden + 2)
    }

    /// Adds freshly initialised weights, uniform in `±1/sqrt(hidden)`.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut rng::Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut ids = Vec::with_capacity(4);
        for (name, shape) in GRU_TENSORS.iter().zip(Self::shapes(input, hidden)) {
            let n = shape.iter().product();
            let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            ids.push(store.insert(format!("{prefix}.{name}"), Tensor::new(shape, values)?)?);
        }
        Ok(Gru {
            input_size: input,
            hidden_size: hidden,
            w_ih: ids[0],
            w_hh: ids[1],
            b_ih: ids[2],
            b_hh: ids[3],
        })
    }

    /// Finds existing weights by name and checks their shapes.
    pub fn locate(store: &ParamStore, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(4);
        for (name, shape) in GRU_TENSORS.iter().zip(Self::shapes(input, hidden)) {
            let full = format!("{prefix}.{name}");
            let id = store
                .id(&full)
                .ok_or_else(|| Error::format("checkpoint", format!("missing parameter `{full}`")))?;
            if store.value(id).shape() != shape.as_slice() {
                return Err(Error::dim(format!(
                    "parameter `{full}` has shape {:?}, expected {shape:?}",
                    store.value(id).shape()
                )));
            }
            ids.push(id);
        }
        Ok(Gru {
            input_size: input,
            hidden_size: hidden,
            w_ih: ids[0],
            w_hh: ids[1],
            b_ih: ids[2],
            b_hh: ids[3],
        })
    }

    pub fn weights<'a>(&self, values: &'a ParamValues) -> GruWeights<'a> {
        GruWeights {
            w_ih: &values[self.w_ih],
            w_hh: &values[self.w_hh],
            b_ih: &values[self.b_ih],
            b_hh: &values[self.b_hh],
        }
    }

    pub fn forward(&self, values: &ParamValues, input: &Tensor) -> GruTrace {
        gru_forward(&self.weights(values), input)
    }

    /// BPTT into the store's gradient buffers; returns the input gradient.
    pub fn backward(
        &self,
        values: &ParamValues,
        grads: &mut GradBuffers,
        trace: &GruTrace,
        d_outputs: &[f64],
    ) -> Vec<f64> {
        let take = |grads: &mut GradBuffers, id: ParamId| {
            std::mem::replace(&mut grads[id], Tensor::zeros(&[0])).into_data()
        };
        let mut local = GruGrads {
            w_ih: take(grads, self.w_ih),
            w_hh: take(grads, self.w_hh),
            b_ih: take(grads, self.b_ih),
            b_hh: take(grads, self.b_hh),
        };
        let d_input = gru_backward(&self.weights(values), trace, d_outputs, &mut local);
        let [s_ih, s_hh, s_bi, s_bh] = Self::shapes(self.input_size, self.hidden_size);
        let restore = |shape, data| Tensor::new(shape, data).expect("gradient shape preserved");
        grads[self.w_ih] = restore(s_ih, local.w_ih);
        grads[self.w_hh] = restore(s_hh, local.w_hh);
        grads[self.b_ih] = restore(s_bi, local.b_ih);
        grads[self.b_hh] = restore(s_bh, local.b_hh);
        d_input
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    struct Owned {
        w_ih: Tensor,
        w_hh: Tensor,
        b_ih: Tensor,
        b_hh: Tensor,
    }

    impl Owned {
        fn zeros(i: usize, h: usize) -> Self {
            Owned {
                w_ih: Tensor::zeros(&[i, 3 * h]),
                w_hh: Tensor::zeros(&[h, 3 * h]),
                b_ih: Tensor::zeros(&[3 * h]),
                b_hh: Tensor::zeros(&[3 * h]),
            }
        }

        fn random(i: usize, h: usize, seed: u64) -> Self {
            let mut rng = rng::Rng::seed_from_u64(seed);
            let mut o = Self::zeros(i, h);
            for t in [&mut o.w_ih, &mut o.w_hh, &mut o.b_ih, &mut o.b_hh] {
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
            }
            o
        }

        fn tensor_mut(&mut self, which: usize) -> &mut Tensor {
            match which {
                0 => &mut self.w_ih,
                1 => &mut self.w_hh,
                2 => &mut self.b_ih,
                _ => &mut self.b_hh,
            }
        }

        fn view(&self) -> GruWeights<'_> {
            GruWeights {
                w_ih: &self.w_ih,
                w_hh: &self.w_hh,
                b_ih: &self.b_ih,
                b_hh: &self.b_hh,
            }
        }
    }

    /// Scalar, loop-written GRU step with unpacked weight indexing.
    fn oracle_step(x: &[f64], h: &[f64], w: &Owned) -> Vec<f64> {
        let hs = h.len();
        let wi = |row: usize, gate: usize, k: usize| w.w_ih.data()[row * 3 * hs + gate * hs + k];
        let wh = |row: usize, gate: usize, k: usize| w.w_hh.data()[row * 3 * hs + gate * hs + k];
        let bi = |gate: usize, k: usize| w.b_ih.data()[gate * hs + k];
        let bh = |gate: usize, k: usize| w.b_hh.data()[gate * hs + k];
        let mut out = vec![0.0; hs];
        for k in 0..hs {
            let mut a = [0.0f64; 3];
            let mut b = [0.0f64; 3];
            for gate in 0..3 {
                a[gate] = bi(gate, k);
                for (row, xv) in x.iter().enumerate() {
                    a[gate] += xv * wi(row, gate, k);
                }
                b[gate] = bh(gate, k);
                for (row, hv) in h.iter().enumerate() {
                    b[gate] += hv * wh(row, gate, k);
                }
            }
            let r = 1.0 / (1.0 + (-(a[0] + b[0])).exp());
            let u = 1.0 / (1.0 + (-(a[1] + b[1])).exp());
            let n = (a[2] + r * b[2]).tanh();
            out[k] = (1.0 - u) * n + u * h[k];
        }
        out
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let w = Owned::zeros(3, 4);
        assert_eq!(gru_step(&[0.0; 3], &[0.0; 4], &w.view()).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let w = Owned::zeros(3, 4);
        let h = [0.8, -0.4, 0.1, 0.0];
        let out = gru_step(&[1.0, 2.0, 3.0], &h, &w.view()).unwrap();
        for (o, hv) in out.iter().zip(h) {
            assert_eq!(*o, 0.5 * hv);
        }
    }

    #[test]
    fn step_matches_scalar_oracle() {
        for seed in 0..5 {
            let w = Owned::random(3, 3, seed);
            let x = [0.3, -0.7, 1.1];
            let h = [0.2, -0.5, 0.9];
            let got = gru_step(&x, &h, &w.view()).unwrap();
            let want = oracle_step(&x, &h, &w);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(got.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let w = Owned::zeros(3, 4);
        assert!(matches!(gru_step(&[0.0; 2], &[0.0; 4], &w.view()), Err(Error::Dimension(_))));
        assert!(matches!(gru_step(&[0.0; 3], &[0.0; 5], &w.view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn sequence_backward_matches_finite_differences() {
        let (i, h, t) = (3, 4, 5);
        let w = Owned::random(i, h, 9);
        let mut rng = rng::Rng::seed_from_u64(10);
        let input = Tensor::matrix(t, i, (0..t * i).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let probe: Vec<f64> = (0..t * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |w: &Owned, x: &Tensor| -> f64 {
            let tr = gru_forward(&w.view(), x);
            tr.outputs().data().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let trace = gru_forward(&w.view(), &input);
        let mut g = GruGrads {
            w_ih: vec![0.0; i * 3 * h],
            w_hh: vec![0.0; h * 3 * h],
            b_ih: vec![0.0; 3 * h],
            b_hh: vec![0.0; 3 * h],
        };
        let dx = gru_backward(&w.view(), &trace, &probe, &mut g);
        let eps = 1e-5;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * eps);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
            assert!(rel < 1e-6, "fd {fd} vs analytic {analytic}");
        };
        for (k, &d) in dx.iter().enumerate() {
            let (mut p, mut m) = (input.clone(), input.clone());
            p.data_mut()[k] += eps;
            m.data_mut()[k] -= eps;
            check(d, loss(&w, &p), loss(&w, &m));
        }
        for (which, analytic) in [&g.w_ih, &g.w_hh, &g.b_ih, &g.b_hh].into_iter().enumerate() {
            for (k, &a) in analytic.iter().enumerate() {
                let mut wp = Owned::random(i, h, 9);
                let mut wm = Owned::random(i, h, 9);
                wp.tensor_mut(which).data_mut()[k] += eps;
                wm.tensor_mut(which).data_mut()[k] -= eps;
                check(a, loss(&wp, &input), loss(&wm, &input));
            }
        }
    }
}
