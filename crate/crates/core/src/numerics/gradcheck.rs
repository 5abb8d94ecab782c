use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Pass threshold for analytic-vs-numeric gradient agreement.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// `|a − b| / max(|a|, |b|)`, guarded against two zero gradients.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1e-8f64.max(a.abs()).max(b.abs())
}

/// Central-difference gradient of `loss` with respect to every scalar in
/// `params`, returned in parameter order.
pub fn finite_diff_grad<F>(params: &ParamStore, h: f64, mut loss: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    assert!(h > 0.0);
    let first = loss(params)?;
    let second = loss(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids() {
        let shape = params.value(id).shape().to_vec();
        let mut g = Tensor::zeros(&shape);
        for i in 0..g.len() {
            let orig = params.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + h;
            let plus = loss(&work)?;
            work.value_mut(id).data_mut()[i] = orig - h;
            let minus = loss(&work)?;
            work.value_mut(id).data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Per-tensor outcome of a gradient check.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub passed: bool,
}

/// Compare the analytic gradients held in `analytic` against `numeric`.
pub fn compare_grads(analytic: &ParamStore, numeric: &[Tensor]) -> Vec<TensorCheck> {
    analytic
        .iter()
        .zip(numeric)
        .map(|((name, p), num)| {
            let (worst_index, max_rel_err) = p
                .grad
                .data()
                .iter()
                .zip(num.data())
                .map(|(a, b)| rel_err(*a, *b))
                .enumerate()
                .fold((0, 0.0), |best, (i, e)| if e > best.1 || e.is_nan() { (i, e) } else { best });
            TensorCheck {
                name: name.to_string(),
                max_rel_err,
                worst_index,
                passed: max_rel_err < GRADCHECK_TOL,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut s = ParamStore::new();
        let id = s.add("theta", Tensor::vector(vec![3.0]));
        let g = finite_diff_grad(&s, 1e-5, |p| Ok(p.value(id).data()[0].powi(2))).unwrap();
        assert!((g[0].data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::vector(vec![1.0, 2.0]));
        s.add("b", Tensor::zeros(&[2, 2]));
        let g = finite_diff_grad(&s, 1e-5, |_| Ok(4.2)).unwrap();
        assert!(g.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn detects_non_deterministic_loss() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::vector(vec![1.0]));
        let calls = Cell::new(0.0);
        let err = finite_diff_grad(&s, 1e-5, |_| {
            calls.set(calls.get() + 1.0);
            Ok(calls.get())
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic { .. }));
    }

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(rel_err(1e-6, 0.0), 1.0);
        assert!((rel_err(2e-6, 2.02e-6) - 0.02 / 2.02).abs() < 1e-12);
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!((rel_err(200.0, 202.0) - 2.0 / 202.0).abs() < 1e-15);
    }
}
