//! Bi-directional recurrent layers and temporal sub-sampling.

use super::gru::{gru_forward, Gru, GruTrace, GruWeights};
use crate::error::{Error, Result};
use crate::numcore::{GradBuffers, ParamValues, Tensor};

/// Output of one encoder layer, `T_l × Δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSequence {
    pub data: Tensor,
    pub layer_index: usize,
}

/// Keeps rows `0, M, 2M, …` (1-based `iM + 1`), exactly `⌊T/M⌋` of them.
pub fn subsample(h: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Config("sub-sampling factor must be at least 1".into()));
    }
    let len = h.rows() / factor;
    if len == 0 {
        return Err(Error::SequenceTooShort {
            len: h.rows(),
            factor,
        });
    }
    let width = h.cols();
    let mut data = Vec::with_capacity(len * width);
    for i in 0..len {
        data.extend_from_slice(h.row(i * factor));
    }
    Tensor::matrix(len, width, data)
}

/// Scatters the gradient of a sub-sampled sequence back to the `full_len`
/// rows it was taken from.
pub fn subsample_backward(d_sub: &Tensor, full_len: usize, factor: usize) -> Tensor {
    let width = d_sub.cols();
    let mut d = Tensor::zeros(&[full_len, width]);
    for i in 0..d_sub.rows() {
        d.row_mut(i * factor).copy_from_slice(d_sub.row(i));
    }
    d
}

fn concat_directions(fwd: &GruTrace, bwd: &GruTrace) -> Tensor {
    let t_len = fwd.len();
    let mut data = Vec::new();
    for t in 0..t_len {
        data.extend_from_slice(fwd.output_row(t));
        data.extend_from_slice(bwd.output_row(t_len - 1 - t));
    }
    let width = data.len() / t_len;
    Tensor::matrix(t_len, width, data).expect("consistent directions")
}

/// Forward recurrence over the sequence, backward recurrence over its time
/// reversal (re-aligned), concatenated per step as `[forward; backward]`.
pub fn bidir_layer(input: &Tensor, fwd: &GruWeights, bwd: &GruWeights) -> Result<Tensor> {
    if input.rows() == 0 {
        return Err(Error::dim("bi-directional layer over an empty sequence"));
    }
    for p in [fwd, bwd] {
        if input.cols() != p.input_size() {
            return Err(Error::dim(format!(
                "layer input has width {}, GRU expects {}",
                input.cols(),
                p.input_size()
            )));
        }
    }
    let f = gru_forward(fwd, input);
    let b = gru_forward(bwd, &input.reversed_rows());
    Ok(concat_directions(&f, &b))
}

/// A bi-directional layer bound to parameters in a store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiGru {
    pub forward: Gru,
    pub backward: Gru,
}

#[derive(Clone, Debug)]
pub struct BiGruTrace {
    fwd: GruTrace,
    bwd: GruTrace,
}

impl BiGru {
    pub fn output_width(&self) -> usize {
        self.forward.hidden_size + self.backward.hidden_size
    }

    pub fn forward(&self, values: &ParamValues, input: &Tensor) -> (Tensor, BiGruTrace) {
        let fwd = self.forward.forward(values, input);
        let bwd = self.backward.forward(values, &input.reversed_rows());
        let out = concat_directions(&fwd, &bwd);
        (out, BiGruTrace { fwd, bwd })
    }

    /// Returns the gradient with respect to the layer input.
    pub fn backward(
        &self,
        values: &ParamValues,
        grads: &mut GradBuffers,
        trace: &BiGruTrace,
        d_out: &Tensor,
    ) -> Tensor {
        let t_len = d_out.rows();
        let hf = self.forward.hidden_size;
        let hb = self.backward.hidden_size;
        let mut d_fwd = Vec::with_capacity(t_len * hf);
        let mut d_bwd = vec![0.0; t_len * hb];
        for t in 0..t_len {
            let row = d_out.row(t);
            d_fwd.extend_from_slice(&row[..hf]);
            let r = t_len - 1 - t;
            d_bwd[r * hb..(r + 1) * hb].copy_from_slice(&row[hf..]);
        }
        let dx_f = self.forward.backward(values, grads, &trace.fwd, &d_fwd);
        let dx_b = self.backward.backward(values, grads, &trace.bwd, &d_bwd);
        let width = self.forward.input_size;
        let mut dx = Tensor::matrix(t_len, width, dx_f).expect("input gradient shape");
        let dx_b = Tensor::matrix(t_len, width, dx_b).expect("input gradient shape").reversed_rows();
        dx.add_assign(&dx_b).expect("same shape");
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gru::gru_step;
    use crate::numcore::rng;
    use rand::{Rng, SeedableRng};

    fn seq(t: usize, w: usize) -> Tensor {
        Tensor::matrix(t, w, (0..t * w).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn subsample_keeps_every_mth_row() {
        let h = seq(7, 2);
        let s = subsample(&h, 2).unwrap();
        assert_eq!(s.rows(), 3);
        assert_eq!(s.data(), &[0.0, 1.0, 4.0, 5.0, 8.0, 9.0]);
        assert_eq!(subsample(&h, 1).unwrap(), h);
    }

    #[test]
    fn subsample_lengths_match_table_chain() {
        let h = seq(2584, 1);
        let s = subsample(&h, 2).unwrap();
        assert_eq!(s.rows(), 1292);
        // 1-based rows 1, 3, ..., 2583
        assert_eq!(s.data()[0], 0.0);
        assert_eq!(*s.data().last().unwrap(), 2582.0);
        assert_eq!(subsample(&seq(323, 1), 8).unwrap().rows(), 40);
    }

    #[test]
    fn subsample_too_short() {
        match subsample(&seq(3, 2), 4) {
            Err(Error::SequenceTooShort { len, factor }) => assert_eq!((len, factor), (3, 4)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn subsample_backward_scatters() {
        let d = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let full = subsample_backward(&d, 5, 2);
        assert_eq!(full.data(), &[1.0, 0.0, 2.0, 0.0, 0.0]);
    }

    struct Owned([Tensor; 4]);

    impl Owned {
        fn random(i: usize, h: usize, rng: &mut rng::Rng) -> Self {
            let mut make = |shape: &[usize]| {
                let n = shape.iter().product();
                Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-0.7..0.7)).collect()).unwrap()
            };
            Owned([
                make(&[i, 3 * h]),
                make(&[h, 3 * h]),
                make(&[3 * h]),
                make(&[3 * h]),
            ])
        }

        fn view(&self) -> GruWeights<'_> {
            GruWeights {
                w_ih: &self.0[0],
                w_hh: &self.0[1],
                b_ih: &self.0[2],
                b_hh: &self.0[3],
            }
        }
    }

    #[test]
    fn single_step_layer_is_two_cell_steps() {
        let mut rng = rng::Rng::seed_from_u64(1);
        let (f, b) = (Owned::random(3, 2, &mut rng), Owned::random(3, 2, &mut rng));
        let x = Tensor::from_rows(&[vec![0.2, -0.4, 0.9]]).unwrap();
        let out = bidir_layer(&x, &f.view(), &b.view()).unwrap();
        let hf = gru_step(x.row(0), &[0.0; 2], &f.view()).unwrap();
        let hb = gru_step(x.row(0), &[0.0; 2], &b.view()).unwrap();
        assert_eq!(out.row(0), [hf, hb].concat().as_slice());
    }

    #[test]
    fn reversal_symmetry() {
        let mut rng = rng::Rng::seed_from_u64(2);
        let (f, b) = (Owned::random(3, 2, &mut rng), Owned::random(3, 2, &mut rng));
        let x = Tensor::matrix(5, 3, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let out = bidir_layer(&x, &f.view(), &b.view()).unwrap();
        let swapped = bidir_layer(&x.reversed_rows(), &b.view(), &f.view()).unwrap();
        for t in 0..5 {
            let a = out.row(t);
            let s = swapped.row(4 - t);
            assert_eq!(&a[..2], &s[2..]);
            assert_eq!(&a[2..], &s[..2]);
        }
    }

    #[test]
    fn layer_matches_loop_oracle() {
        let mut rng = rng::Rng::seed_from_u64(3);
        let (f, b) = (Owned::random(2, 2, &mut rng), Owned::random(2, 2, &mut rng));
        let x = Tensor::matrix(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let out = bidir_layer(&x, &f.view(), &b.view()).unwrap();

        let mut fwd = vec![vec![0.0; 2]];
        for t in 0..3 {
            let next = gru_step(x.row(t), &fwd[t], &f.view()).unwrap();
            fwd.push(next);
        }
        let mut bwd = vec![vec![0.0; 2]; 4];
        for t in (0..3).rev() {
            bwd[t] = gru_step(x.row(t), &bwd[t + 1], &b.view()).unwrap();
        }
        for t in 0..3 {
            let want = [fwd[t + 1].clone(), bwd[t].clone()].concat();
            for (a, w) in out.row(t).iter().zip(&want) {
                assert!((a - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let mut rng = rng::Rng::seed_from_u64(4);
        let (f, b) = (Owned::random(2, 2, &mut rng), Owned::random(2, 2, &mut rng));
        assert!(bidir_layer(&Tensor::zeros(&[0, 2]), &f.view(), &b.view()).is_err());
    }
}
