use rand::Rng;

use super::{rng, Tensor};
use crate::error::{Error, Result};

/// Per-element scale factors of an inverted-dropout mask: `0` for dropped
/// elements and `1 / (1 - p)` for survivors.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    scales: Vec<f64>,
}

impl DropoutMask {
    pub fn sample(len: usize, p: f64, seed: u64) -> Result<Self> {
        check_probability(p)?;
        let keep = 1.0 / (1.0 - p);
        let mut rng = rng::seeded(seed);
        let scales = (0..len)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        Ok(DropoutMask { scales })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Multiplies `values` elementwise by the mask. Used for both the forward
    /// pass and the gradient.
    pub fn apply(&self, values: &mut [f64]) {
        debug_assert_eq!(values.len(), self.scales.len());
        for (v, s) in values.iter_mut().zip(&self.scales) {
            *v *= s;
        }
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    Ok(())
}

/// Inverted dropout. Inference mode (and `p == 0`) is the identity.
pub fn dropout(x: &Tensor, p: f64, seed: u64, training: bool) -> Result<Tensor> {
    check_probability(p)?;
    let mut out = x.clone();
    if training && p > 0.0 {
        DropoutMask::sample(x.len(), p, seed)?.apply(out.data_mut());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_cases() {
        let x = Tensor::vector((0..100).map(f64::from).collect());
        assert_eq!(dropout(&x, 0.0, 1, true).unwrap(), x);
        assert_eq!(dropout(&x, 0.9, 1, false).unwrap(), x);
    }

    #[test]
    fn rejects_p_of_one() {
        let x = Tensor::vector(vec![1.0]);
        assert!(matches!(dropout(&x, 1.0, 0, true), Err(Error::Config(_))));
        assert!(matches!(dropout(&x, -0.1, 0, false), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let x = Tensor::vector(vec![1.0; 1000]);
        assert_eq!(dropout(&x, 0.3, 42, true).unwrap(), dropout(&x, 0.3, 42, true).unwrap());
        assert_ne!(dropout(&x, 0.3, 42, true).unwrap(), dropout(&x, 0.3, 43, true).unwrap());
    }

    #[test]
    fn zeroed_fraction_and_mean() {
        let n = 1_000_000;
        let x = Tensor::vector(vec![1.0; n]);
        let y = dropout(&x, 0.25, 2024, true).unwrap();
        let zeroed = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeroed - 0.25).abs() < 0.005, "zeroed fraction {zeroed}");
        // Each element is 0 w.p. p and 1/(1-p) otherwise: variance p/(1-p).
        let mean = y.data().iter().sum::<f64>() / n as f64;
        let se = (0.25f64 / 0.75 / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }
}
