use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::shape("softmax of an empty vector"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    Ok(softmax_unchecked(x))
}

/// Softmax without input validation; callers guarantee a non-empty finite input.
pub fn softmax_unchecked(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total = order_free_sum(&mut out.clone());
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Sum that does not depend on the order of `terms` (which it sorts).
pub fn order_free_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn uniform_for_equal_inputs() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn log_weights_recover_proportions() {
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        assert_abs_diff_eq!(p[0], 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 2.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 3.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(softmax(&[1.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(softmax(&[f64::INFINITY]).is_err());
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(-800.0).is_finite());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            x in prop::collection::vec(-50.0f64..50.0, 1..20),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&x).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn sigmoid_is_symmetric(x in -30.0f64..30.0) {
            let s = sigmoid(x);
            prop_assert!(s > 0.0 && s < 1.0);
            prop_assert!((s + sigmoid(-x) - 1.0).abs() < 1e-12);
        }
    }
}
