use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::rng::Rng;

/// Tensor of i.i.d. Gaussian samples. `sigma == 0` yields a constant tensor.
pub fn gaussian_init(shape: &[usize], mean: f64, sigma: f64, rng: &mut Rng) -> Tensor {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be finite and non-negative");
    let n: usize = shape.iter().product();
    let data = if sigma == 0.0 {
        vec![mean; n]
    } else {
        let normal = Normal::new(mean, sigma).expect("valid normal parameters");
        (0..n).map(|_| normal.sample(rng)).collect()
    };
    Tensor::from_vec(shape, data).expect("shape product matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_sigma_is_constant() {
        let t = gaussian_init(&[3, 4], 0.2, 0.0, &mut stream(1, "t"));
        assert!(t.data().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn sample_moments_at_ten_thousand_draws() {
        let t = gaussian_init(&[100, 100], 0.0, 0.1, &mut stream(3, "init"));
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let std = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 3.0 * 0.1 / n.sqrt(), "mean {mean}");
        assert!((0.09..=0.11).contains(&std), "std {std}");
    }

    #[test]
    fn same_seed_same_tensor() {
        let a = gaussian_init(&[5, 5], 0.0, 0.1, &mut stream(9, "w"));
        let b = gaussian_init(&[5, 5], 0.0, 0.1, &mut stream(9, "w"));
        assert_eq!(a.data(), b.data());
    }
}
