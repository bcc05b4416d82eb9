//! Central finite-difference checks of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::mse_loss;
use super::network::Layer;
use super::{Mode, Network, NnError, Tensor4};

pub const DEFAULT_STEP: f64 = 1e-4;

/// Below this magnitude both gradients count as zero.
const ZERO_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Probes skipped because the ±step perturbation crossed a ReLU or
    /// max-pool switching point, where the loss is not differentiable.
    pub straddled: usize,
    pub max_rel_error: f64,
    /// Location of the worst disagreement.
    pub worst: String,
}

impl GradCheck {
    fn new() -> Self {
        GradCheck { checked: 0, straddled: 0, max_rel_error: 0.0, worst: String::new() }
    }

    fn record(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = format!("{} (analytic {analytic:.6e}, numeric {numeric:.6e})", at());
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tolerance
    }

    /// Fraction of probes that straddled a kink.
    pub fn straddled_fraction(&self) -> f64 {
        self.straddled as f64 / (self.checked + self.straddled).max(1) as f64
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ZERO_FLOOR {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks one layer under the scalar loss `sum(out * r)` for a fixed random `r`,
/// with respect to the input and every parameter.
pub fn check_layer(layer: &Layer, input: &Tensor4, mode: Mode, step: f64, seed: u64) -> Result<GradCheck, NnError> {
    let mut base = layer.clone();
    base.zero_grad();
    let out = base.forward(input, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..out.data().len()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
    let grad_in = base.backward(&Tensor4::from_vec(out.shape(), r.clone())?)?;
    let param_grads: Vec<Vec<f64>> = base.params_mut().into_iter().map(|(_, g)| g.to_vec()).collect();

    let probe = |l: &Layer, x: &Tensor4| -> Result<f64, NnError> {
        let mut l = l.clone();
        Ok(dot(l.forward(x, mode)?.data(), &r))
    };

    let mut report = GradCheck::new();
    for i in 0..input.data().len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += step;
        let mut minus = input.clone();
        minus.data_mut()[i] -= step;
        let numeric = (probe(&base, &plus)? - probe(&base, &minus)?) / (2.0 * step);
        report.record(grad_in.data()[i], numeric, || format!("{} input[{i}]", layer.kind()));
    }
    for (t, grads) in param_grads.iter().enumerate() {
        for i in 0..grads.len() {
            let mut plus = base.clone();
            plus.params_mut()[t].0[i] += step;
            let mut minus = base.clone();
            minus.params_mut()[t].0[i] -= step;
            let numeric = (probe(&plus, input)? - probe(&minus, input)?) / (2.0 * step);
            report.record(grads[i], numeric, || format!("{} param{t}[{i}]", layer.kind()));
        }
    }
    Ok(report)
}

/// Whole-network check under MSE loss in train mode with the dropout mask held
/// fixed. Every input element is checked; up to `per_tensor` sampled entries
/// of each parameter tensor are checked. Probes whose perturbation changes the
/// ReLU/max-pool switching pattern are counted in `straddled` instead.
pub fn check_network(
    net: &Network,
    input: &Tensor4,
    targets: &[f64],
    per_tensor: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheck, NnError> {
    let mut base = net.clone();
    base.freeze_dropout(true);
    base.zero_grad();
    let pred = base.forward(input, Mode::Train)?;
    let pattern = base.kink_pattern();
    let (_, grad) = mse_loss(pred.data(), targets)?;
    let grad_in = base.backward(&Tensor4::from_vec(pred.shape(), grad)?)?;
    let param_grads: Vec<Vec<f64>> = base.params_mut().into_iter().map(|(_, g)| g.to_vec()).collect();

    let probe = |n: &Network, x: &Tensor4| -> Result<(f64, bool), NnError> {
        let mut n = n.clone();
        let p = n.forward(x, Mode::Train)?;
        Ok((mse_loss(p.data(), targets)?.0, n.kink_pattern() == pattern))
    };
    let mut report = GradCheck::new();
    let mut compare = |plus: (f64, bool), minus: (f64, bool), analytic: f64, at: &dyn Fn() -> String| {
        if plus.1 && minus.1 {
            report.record(analytic, (plus.0 - minus.0) / (2.0 * step), at);
        } else {
            report.straddled += 1;
        }
    };

    for i in 0..input.data().len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += step;
        let mut minus = input.clone();
        minus.data_mut()[i] -= step;
        compare(probe(&base, &plus)?, probe(&base, &minus)?, grad_in.data()[i], &|| format!("network input[{i}]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (t, grads) in param_grads.iter().enumerate() {
        let picks = sample(&mut rng, grads.len(), per_tensor.min(grads.len()));
        for i in picks.iter() {
            let mut plus = base.clone();
            plus.params_mut()[t].0[i] += step;
            let mut minus = base.clone();
            minus.params_mut()[t].0[i] -= step;
            compare(probe(&plus, input)?, probe(&minus, input)?, grads[i], &|| format!("network param tensor {t}[{i}]"));
        }
    }
    Ok(report)
}

/// Seeded uniform tensor whose entries stay at least `margin` away from zero,
/// so ReLU kinks are not straddled by the finite-difference step.
pub fn random_tensor(shape: [usize; 4], margin: f64, seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rand::Rng::random_range(&mut rng, margin..1.0);
            if rand::Rng::random_bool(&mut rng, 0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor4::from_vec(shape, data).expect("shape matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activation::{Dropout, Relu};
    use crate::nn::batchnorm::BatchNorm;
    use crate::nn::conv::Conv2d;
    use crate::nn::dense::Dense;
    use crate::nn::pool::MaxPool;

    fn conv(in_ch: usize, out_ch: usize, seed: u64) -> Layer {
        let mut c = Conv2d::new(in_ch, out_ch);
        c.init(&mut ChaCha8Rng::seed_from_u64(seed));
        c.bias.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64);
        Layer::Conv(c)
    }

    #[test]
    fn conv_gradients() {
        let x = random_tensor([2, 6, 4, 2], 0.0, 1);
        let r = check_layer(&conv(2, 3, 2), &x, Mode::Train, DEFAULT_STEP, 3).unwrap();
        assert!(r.passes(1e-3), "{r:?}");
    }

    #[test]
    fn batchnorm_gradients_both_modes() {
        let mut bn = BatchNorm::new(3);
        bn.gamma = vec![0.5, 1.5, -0.7];
        bn.beta = vec![0.1, -0.2, 0.3];
        bn.running_mean = vec![0.2, -0.1, 0.0];
        bn.running_var = vec![0.5, 2.0, 1.0];
        let x = random_tensor([3, 4, 2, 3], 0.0, 4);
        for mode in [Mode::Train, Mode::Infer] {
            let r = check_layer(&Layer::BatchNorm(bn.clone()), &x, mode, DEFAULT_STEP, 5).unwrap();
            assert!(r.passes(1e-3), "{mode:?} {r:?}");
        }
    }

    #[test]
    fn relu_gradients() {
        let x = random_tensor([2, 5, 3, 2], 0.01, 6);
        let r = check_layer(&Layer::Relu(Relu::new()), &x, Mode::Train, DEFAULT_STEP, 7).unwrap();
        assert!(r.passes(1e-6), "{r:?}");
    }

    #[test]
    fn maxpool_gradients() {
        let x = random_tensor([2, 5, 3, 2], 0.0, 8);
        let r = check_layer(&Layer::MaxPool(MaxPool::new()), &x, Mode::Train, DEFAULT_STEP, 9).unwrap();
        assert!(r.passes(1e-3), "{r:?}");
    }

    #[test]
    fn dropout_gradients() {
        let x = random_tensor([2, 4, 3, 2], 0.0, 10);
        let r = check_layer(&Layer::Dropout(Dropout::new(0.2, 1).unwrap()), &x, Mode::Infer, DEFAULT_STEP, 11).unwrap();
        assert!(r.passes(1e-3), "{r:?}");
        let mut d = Dropout::new(0.2, 1).unwrap();
        d.freeze_mask(true);
        let r = check_layer(&Layer::Dropout(d), &x, Mode::Train, DEFAULT_STEP, 11).unwrap();
        assert!(r.passes(1e-3), "{r:?}");
    }

    #[test]
    fn dense_gradients() {
        let mut d = Dense::new(12, 2);
        d.init(&mut ChaCha8Rng::seed_from_u64(12));
        let x = random_tensor([3, 2, 3, 2], 0.0, 13);
        let r = check_layer(&Layer::Dense(d), &x, Mode::Train, DEFAULT_STEP, 14).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn network_gradients() {
        let net = Network::speed_cnn(4);
        let x = random_tensor([3, 45, 4, 1], 0.0, 5);
        let r = check_network(&net, &x, &[0.5, 1.0, 1.5], 8, DEFAULT_STEP, 6).unwrap();
        assert!(r.passes(1e-2), "{r:?}");
        assert!(r.straddled_fraction() < 0.25, "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 1e-12), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
