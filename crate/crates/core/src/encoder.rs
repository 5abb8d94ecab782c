//! Temporal encoder: a one-hidden-layer denoising autoencoder with an extra
//! head that predicts the following window. The hidden activation is the
//! memory payload.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::snapshot::Snapshot;
use crate::numerics::{adam_step, add_outer, gaussian_init, matvec_add, matvec_t_add, sigmoid, AdamConfig, ParamId, ParamStore};
use crate::rng::{stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub window_len: usize,
    pub stride: usize,
    /// Std of the corruption noise, relative to the unit price scale.
    pub noise_std: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_len: 10,
            stride: 1,
            noise_std: 0.1,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.window_len == 0 {
            errs.push("window.window_len must be at least 1".into());
        }
        if self.stride == 0 {
            errs.push("window.stride must be at least 1".into());
        }
        if !(self.noise_std >= 0.0) {
            errs.push("window.noise_std must be non-negative".into());
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Weight of the next-window prediction loss relative to reconstruction.
    pub predict_weight: f64,
    pub init_sigma: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_dim: 25,
            epochs: 100,
            lr: 5e-3,
            batch_size: 16,
            predict_weight: 1.0,
            init_sigma: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.hidden_dim == 0 {
            errs.push("encoder.hidden_dim must be at least 1".into());
        }
        if self.batch_size == 0 {
            errs.push("encoder.batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0) {
            errs.push("encoder.lr must be non-negative".into());
        }
        if !(self.predict_weight >= 0.0) {
            errs.push("encoder.predict_weight must be non-negative".into());
        }
        errs
    }
}

const W_ENC: ParamId = ParamId(0);
const B_ENC: ParamId = ParamId(1);
const W_DEC: ParamId = ParamId(2);
const B_DEC: ParamId = ParamId(3);
const W_PRED: ParamId = ParamId(4);
const B_PRED: ParamId = ParamId(5);

#[derive(Clone, Debug)]
pub struct Encoder {
    pub window: WindowConfig,
    pub params: ParamStore,
}

/// Add zero-mean Gaussian noise of std `noise_std`.
pub fn corrupt(window: &[f64], noise_std: f64, rng: &mut Rng) -> Vec<f64> {
    if noise_std == 0.0 {
        return window.to_vec();
    }
    let normal = Normal::new(0.0, noise_std).expect("noise_std is finite and non-negative");
    window.iter().map(|x| x + normal.sample(rng)).collect()
}

impl Encoder {
    pub fn init(window: WindowConfig, hidden_dim: usize, sigma: f64, rng: &mut Rng) -> Self {
        let (l, h) = (window.window_len, hidden_dim);
        let mut params = ParamStore::new();
        params.add("W_enc", gaussian_init(&[h, l], 0.0, sigma, rng));
        params.add("b_enc", gaussian_init(&[h], 0.0, 0.0, rng));
        params.add("W_dec", gaussian_init(&[l, h], 0.0, sigma, rng));
        params.add("b_dec", gaussian_init(&[l], 0.0, 0.0, rng));
        params.add("W_pred", gaussian_init(&[l, h], 0.0, sigma, rng));
        params.add("b_pred", gaussian_init(&[l], 0.0, 0.0, rng));
        Encoder { window, params }
    }

    pub fn hidden_dim(&self) -> usize {
        self.params.value(B_ENC).len()
    }

    pub fn encode(&self, window: &[f64]) -> Result<Vec<f64>> {
        if window.len() != self.window.window_len {
            return Err(Error::shape(format!(
                "window has length {}, expected {}",
                window.len(),
                self.window.window_len
            )));
        }
        Ok(hidden(&self.params, window))
    }

    /// Features indexed by day; days without a full window get an empty vector.
    pub fn encode_series(&self, prices: &[f64]) -> Vec<Vec<f64>> {
        windows_by_day(prices, self.window.window_len, |w| hidden(&self.params, w))
    }

    /// Reconstruction and prediction outputs for a (possibly corrupted) input.
    pub fn reconstruct(&self, window: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.encode(window)?;
        Ok((head(&self.params, W_DEC, B_DEC, &h), head(&self.params, W_PRED, B_PRED, &h)))
    }

    /// Mean squared reconstruction error over every full window of `prices`, uncorrupted.
    pub fn reconstruction_mse(&self, prices: &[f64]) -> Result<f64> {
        let l = self.window.window_len;
        if prices.len() < l {
            return Err(Error::InsufficientData(format!("need at least {l} prices")));
        }
        let mut total = 0.0;
        let n = prices.len() - l + 1;
        for w in prices.windows(l) {
            let (rec, _) = self.reconstruct(w)?;
            total += rec.iter().zip(w).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / l as f64;
        }
        Ok(total / n as f64)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::new(
            "encoder",
            serde_json::json!({
                "window_len": self.window.window_len,
                "stride": self.window.stride,
                "noise_std": self.window.noise_std,
                "hidden_dim": self.hidden_dim(),
            }),
            &self.params,
        )
    }

    pub fn from_snapshot(snap: &Snapshot) -> Result<Self> {
        snap.expect_kind("encoder")?;
        let field = |k: &str| {
            snap.header
                .get(k)
                .ok_or_else(|| Error::Snapshot(format!("encoder header lacks {k}")))
        };
        let as_usize = |k: &str| -> Result<usize> {
            field(k)?
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Snapshot(format!("encoder header field {k} is not a count")))
        };
        let window = WindowConfig {
            window_len: as_usize("window_len")?,
            stride: as_usize("stride")?,
            noise_std: field("noise_std")?.as_f64().unwrap_or(0.0),
        };
        let h = as_usize("hidden_dim")?;
        let params = snap.to_store()?;
        let l = window.window_len;
        let expected: [(&str, Vec<usize>); 6] = [
            ("W_enc", vec![h, l]),
            ("b_enc", vec![h]),
            ("W_dec", vec![l, h]),
            ("b_dec", vec![l]),
            ("W_pred", vec![l, h]),
            ("b_pred", vec![l]),
        ];
        if params.len() != expected.len() {
            return Err(Error::Snapshot("encoder snapshot has the wrong tensor count".into()));
        }
        for (i, (name, shape)) in expected.iter().enumerate() {
            if params.require(name, shape)?.index() != i {
                return Err(Error::Snapshot(format!("tensor {name} out of order")));
            }
        }
        Ok(Encoder { window, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.snapshot().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_snapshot(&Snapshot::load(path)?)
    }
}

fn hidden(params: &ParamStore, x: &[f64]) -> Vec<f64> {
    let mut z = params.value(B_ENC).data().to_vec();
    matvec_add(params.value(W_ENC), x, &mut z);
    z.into_iter().map(sigmoid).collect()
}

fn head(params: &ParamStore, w: ParamId, b: ParamId, h: &[f64]) -> Vec<f64> {
    let mut y = params.value(b).data().to_vec();
    matvec_add(params.value(w), h, &mut y);
    y
}

/// Apply `f` to the window ending on each day.
pub fn windows_by_day<T: Default>(prices: &[f64], len: usize, mut f: impl FnMut(&[f64]) -> T) -> Vec<T> {
    (0..prices.len())
        .map(|d| if d + 1 >= len { f(&prices[d + 1 - len..=d]) } else { T::default() })
        .collect()
}

/// Input windows and their successors: `(start of x, start of target)`.
pub fn training_pairs(n: usize, cfg: &WindowConfig) -> Vec<(usize, usize)> {
    let l = cfg.window_len;
    (0..)
        .step_by(cfg.stride)
        .take_while(|&i| i + 2 * l <= n)
        .map(|i| (i, i + l))
        .collect()
}

/// Loss of one example; accumulates gradients into `params` when `grad` is set.
pub fn example_loss(params: &mut ParamStore, input: &[f64], clean: &[f64], next: &[f64], predict_weight: f64, grad: bool) -> f64 {
    let l = clean.len() as f64;
    let h = hidden(params, input);
    let rec = head(params, W_DEC, B_DEC, &h);
    let pred = head(params, W_PRED, B_PRED, &h);
    let dr: Vec<f64> = rec.iter().zip(clean).map(|(a, b)| a - b).collect();
    let dp: Vec<f64> = pred.iter().zip(next).map(|(a, b)| a - b).collect();
    let loss = dr.iter().map(|v| v * v).sum::<f64>() / l + predict_weight * dp.iter().map(|v| v * v).sum::<f64>() / l;
    if grad {
        let gr: Vec<f64> = dr.iter().map(|v| 2.0 * v / l).collect();
        let gp: Vec<f64> = dp.iter().map(|v| 2.0 * predict_weight * v / l).collect();
        let (vals, mut grads) = params.split();
        let mut dh = vec![0.0; h.len()];
        for (w, b, g) in [(W_DEC, B_DEC, &gr), (W_PRED, B_PRED, &gp)] {
            add_outer(grads.get_mut(w), g, &h);
            for (x, y) in grads.get_mut(b).data_mut().iter_mut().zip(g.iter()) {
                *x += y;
            }
            matvec_t_add(vals.get(w), g, &mut dh);
        }
        let dz: Vec<f64> = dh.iter().zip(&h).map(|(d, s)| d * s * (1.0 - s)).collect();
        add_outer(grads.get_mut(W_ENC), &dz, input);
        for (x, y) in grads.get_mut(B_ENC).data_mut().iter_mut().zip(&dz) {
            *x += y;
        }
    }
    loss
}

/// Train on max-normalized `prices`. Returns the encoder and the mean
/// minibatch loss of each epoch.
pub fn train_encoder(prices: &[f64], window: &WindowConfig, cfg: &EncoderConfig, seed: u64) -> Result<(Encoder, Vec<f64>)> {
    let mut errs = window.validate();
    errs.extend(cfg.validate());
    if !errs.is_empty() {
        return Err(Error::InvalidConfig(errs));
    }
    let pairs = training_pairs(prices.len(), window);
    if pairs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "encoder training needs at least {} prices, got {}",
            2 * window.window_len,
            prices.len()
        )));
    }
    let mut enc = Encoder::init(window.clone(), cfg.hidden_dim, cfg.init_sigma, &mut stream(seed, "encoder/init"));
    let mut order_rng = stream(seed, "encoder/order");
    let mut noise_rng = stream(seed, "encoder/noise");
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let l = window.window_len;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            enc.params.zero_grads();
            for &k in batch {
                let (xi, yi) = pairs[k];
                let clean = &prices[xi..xi + l];
                let noisy = corrupt(clean, window.noise_std, &mut noise_rng);
                total += example_loss(&mut enc.params, &noisy, clean, &prices[yi..yi + l], cfg.predict_weight, true);
            }
            let scale = 1.0 / batch.len() as f64;
            for p in enc.params.params_mut() {
                p.grad.scale(scale);
            }
            adam_step(&mut enc.params, &adam);
        }
        let mean = total / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("encoder training loss".into()));
        }
        trace.push(mean);
    }
    enc.params.zero_grads();
    Ok((enc, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{compare_grads, finite_diff_grad, Tensor};

    #[test]
    fn corrupt_identity_and_determinism() {
        let w = [0.1, 0.5, 0.9];
        assert_eq!(corrupt(&w, 0.0, &mut stream(0, "n")), w.to_vec());
        assert_eq!(corrupt(&w, 0.1, &mut stream(3, "n")), corrupt(&w, 0.1, &mut stream(3, "n")));
    }

    #[test]
    fn corrupt_noise_std() {
        let zeros = vec![0.0; 10_000];
        let noisy = corrupt(&zeros, 0.1, &mut stream(8, "n"));
        let mean = noisy.iter().sum::<f64>() / 1e4;
        let sd = (noisy.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 1e4).sqrt();
        assert!((0.095..=0.105).contains(&sd), "{sd}");
    }

    #[test]
    fn zero_weights_encode_to_half() {
        let mut enc = Encoder::init(WindowConfig::default(), 25, 0.0, &mut stream(0, "i"));
        enc.params.value_mut(W_ENC).fill(0.0);
        let h = enc.encode(&[0.3; 10]).unwrap();
        assert_eq!(h, vec![0.5; 25]);
        assert!(enc.encode(&[0.3; 9]).is_err());
    }

    #[test]
    fn encode_matches_direct_evaluation() {
        let enc = Encoder::init(WindowConfig { window_len: 3, ..WindowConfig::default() }, 4, 0.7, &mut stream(2, "i"));
        let x = [0.2, 0.9, 0.4];
        let w: &Tensor = enc.params.value(W_ENC);
        let b = enc.params.value(B_ENC).data();
        let h = enc.encode(&x).unwrap();
        for i in 0..4 {
            let z: f64 = (0..3).map(|j| w.data()[i * 3 + j] * x[j]).sum::<f64>() + b[i];
            assert!((h[i] - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
            assert!(h[i] > 0.0 && h[i] < 1.0);
        }
        assert_eq!(h, enc.encode(&x).unwrap());
    }

    #[test]
    fn gradcheck_tiny() {
        let mut enc = Encoder::init(WindowConfig { window_len: 3, ..WindowConfig::default() }, 2, 0.5, &mut stream(1, "i"));
        for id in [B_ENC, B_DEC, B_PRED] {
            enc.params.value_mut(id).fill(0.1);
        }
        let (x, clean, next) = ([0.3, 0.8, 0.1], [0.25, 0.7, 0.2], [0.9, 0.4, 0.6]);
        example_loss(&mut enc.params, &x, &clean, &next, 1.0, true);
        let numeric = finite_diff_grad(&enc.params, 1e-5, |s| {
            let mut s = s.clone();
            Ok(example_loss(&mut s, &x, &clean, &next, 1.0, false))
        })
        .unwrap();
        for c in compare_grads(&enc.params, &numeric) {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn too_short_series_rejected() {
        let err = train_encoder(&[0.5; 19], &WindowConfig::default(), &EncoderConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let prices: Vec<f64> = (0..40).map(|i| 0.5 + 0.3 * (i as f64 * 0.4).sin()).collect();
        let cfg = EncoderConfig { lr: 0.0, epochs: 5, ..EncoderConfig::default() };
        let window = WindowConfig { noise_std: 0.0, ..WindowConfig::default() };
        let (enc, trace) = train_encoder(&prices, &window, &cfg, 4).unwrap();
        let init = Encoder::init(window, 25, 0.1, &mut stream(4, "encoder/init"));
        assert!(enc.params.values_equal(&init.params));
        assert!(trace.windows(2).all(|w| (w[0] - w[1]).abs() <= 1e-12 * w[0]));
    }

    #[test]
    fn constant_series_reconstructs() {
        let prices = vec![1.0; 60];
        let cfg = EncoderConfig { epochs: 300, lr: 1e-2, ..EncoderConfig::default() };
        let (enc, _) = train_encoder(&prices, &WindowConfig::default(), &cfg, 0).unwrap();
        assert!(enc.reconstruction_mse(&prices).unwrap() < 1e-3);
    }

    #[test]
    fn plain_autoencoder_on_alternating_series() {
        let prices: Vec<f64> = (0..80).map(|i| if i % 2 == 0 { 0.4 } else { 1.0 }).collect();
        let cfg = EncoderConfig { epochs: 400, lr: 1e-2, predict_weight: 0.0, ..EncoderConfig::default() };
        let window = WindowConfig { noise_std: 0.0, ..WindowConfig::default() };
        let (enc, _) = train_encoder(&prices, &window, &cfg, 1).unwrap();
        assert!(enc.reconstruction_mse(&prices).unwrap() < 1e-3);
    }

    #[test]
    fn sine_loss_mostly_decreasing() {
        let prices: Vec<f64> = (0..300).map(|i| 0.55 + 0.45 * (i as f64 * 0.15).sin()).collect();
        let cfg = EncoderConfig { epochs: 40, batch_size: 32, ..EncoderConfig::default() };
        let window = WindowConfig { noise_std: 0.0, ..WindowConfig::default() };
        let (_, trace) = train_encoder(&prices, &window, &cfg, 2).unwrap();
        let ok = trace.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(ok as f64 >= 0.9 * (trace.len() - 1) as f64, "{trace:?}");
    }

    #[test]
    fn snapshot_round_trip() {
        let enc = Encoder::init(WindowConfig::default(), 25, 0.1, &mut stream(0, "i"));
        let back = Encoder::from_snapshot(&Snapshot::from_json(&enc.snapshot().to_json().unwrap()).unwrap()).unwrap();
        assert!(back.params.values_equal(&enc.params));
        assert_eq!(back.window, enc.window);
    }

    #[test]
    fn features_by_day() {
        let enc = Encoder::init(WindowConfig { window_len: 3, ..WindowConfig::default() }, 2, 0.1, &mut stream(0, "i"));
        let f = enc.encode_series(&[0.1, 0.2, 0.3, 0.4]);
        assert!(f[0].is_empty() && f[1].is_empty());
        assert_eq!(f[3], enc.encode(&[0.2, 0.3, 0.4]).unwrap());
    }
}
