use super::ParamStore;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that components whose true
/// gradient is ~0 are judged on absolute error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares the gradient accumulated by `loss_fn` against central finite
/// differences for every scalar parameter.
///
/// `loss_fn` must return the loss and add its gradient into the store's
/// gradient buffers; the checker zeroes the buffers before each call. The
/// relative error of one component is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(params: &mut ParamStore, epsilon: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(Error::Config(format!(
            "finite-difference step must be in [1e-6, 1e-4], got {epsilon}"
        )));
    }
    params.zero_grads();
    let base = loss_fn(params)?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|(_, _, g)| g.data().to_vec()).collect();
    params.zero_grads();
    let again = loss_fn(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Contract(format!(
            "loss function is not deterministic ({base} vs {again})"
        )));
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for (k, &a) in analytic[id.index()].iter().enumerate() {
            let original = params.value(id).data()[k];
            params.value_mut(id).data_mut()[k] = original + epsilon;
            let plus = loss_fn(params)?;
            params.value_mut(id).data_mut()[k] = original - epsilon;
            let minus = loss_fn(params)?;
            params.value_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = rel;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    params.zero_grads();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let id = store
            .insert("w", Tensor::vector(vec![0.3, -1.5, 2.0, 0.01]))
            .unwrap();
        let report = grad_check(&mut store, 1e-5, |s| {
            let w = s.value(id).data().to_vec();
            let g = s.grad_mut(id).data_mut();
            for (gi, wi) in g.iter_mut().zip(&w) {
                *gi += wi;
            }
            Ok(w.iter().map(|x| x * x).sum::<f64>() / 2.0)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
        assert_eq!(report.checked, 4);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let report = grad_check(&mut store, 1e-5, |s| {
            let w = s.value(id).data()[0];
            s.grad_mut(id).data_mut()[0] += 3.0 * w; // true gradient is 2w
            Ok(w * w)
        })
        .unwrap();
        assert!(report.max_relative_error > 0.3);
        assert_eq!(report.worst, Some(("w".to_string(), 0)));
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let mut calls = 0.0;
        let result = grad_check(&mut store, 1e-5, |_| {
            calls += 1.0;
            Ok(calls)
        });
        assert!(matches!(result, Err(Error::Contract(_))));
    }

    #[test]
    fn epsilon_range_enforced() {
        let mut store = ParamStore::new();
        assert!(matches!(
            grad_check(&mut store, 1e-2, |_| Ok(0.0)),
            Err(Error::Config(_))
        ));
    }
}
