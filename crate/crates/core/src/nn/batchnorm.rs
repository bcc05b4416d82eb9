use super::{Mode, NnError, Tensor4};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over (batch, height, width).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    cache: Option<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
struct Cache {
    mode: Mode,
    x_hat: Tensor4,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            cache: None,
        }
    }

    fn check(&self, input: &Tensor4) -> Result<(), NnError> {
        if input.shape()[3] != self.channels {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} channels", self.channels),
                got: input.shape()[3].to_string(),
            });
        }
        Ok(())
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// estimates (unbiased variance); infer mode uses the running estimates.
    pub fn forward(&mut self, input: &Tensor4, mode: Mode) -> Result<Tensor4, NnError> {
        self.check(input)?;
        let c = self.channels;
        let count = input.data().len() / c;
        let (mean, inv_std) = match mode {
            Mode::Train => {
                if input.batch() < 2 {
                    return Err(NnError::BatchTooSmall(input.batch()));
                }
                let mut mean = vec![0.0; c];
                for px in input.data().chunks_exact(c) {
                    mean.iter_mut().zip(px).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0; c];
                for px in input.data().chunks_exact(c) {
                    for k in 0..c {
                        var[k] += (px[k] - mean[k]).powi(2);
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                let unbias = count as f64 / (count as f64 - 1.0);
                for k in 0..c {
                    self.running_mean[k] = (1.0 - self.momentum) * self.running_mean[k] + self.momentum * mean[k];
                    self.running_var[k] =
                        (1.0 - self.momentum) * self.running_var[k] + self.momentum * var[k] * unbias;
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
                (mean, inv_std)
            }
            Mode::Infer => (
                self.running_mean.clone(),
                self.running_var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect(),
            ),
        };
        let mut x_hat = input.clone();
        for px in x_hat.data_mut().chunks_exact_mut(c) {
            for k in 0..c {
                px[k] = (px[k] - mean[k]) * inv_std[k];
            }
        }
        let mut out = x_hat.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for k in 0..c {
                px[k] = self.gamma[k] * px[k] + self.beta[k];
            }
        }
        self.cache = Some(Cache { mode, x_hat, inv_std });
        Ok(out)
    }

    /// Inference with running statistics, leaving the layer untouched.
    pub fn infer(&self, input: &Tensor4) -> Result<Tensor4, NnError> {
        self.check(input)?;
        let c = self.channels;
        let mut out = input.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for k in 0..c {
                let inv_std = 1.0 / (self.running_var[k] + self.epsilon).sqrt();
                px[k] = self.gamma[k] * ((px[k] - self.running_mean[k]) * inv_std) + self.beta[k];
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache("batchnorm"))?;
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{:?}", cache.x_hat.shape()),
                got: format!("{:?}", grad_out.shape()),
            });
        }
        let c = self.channels;
        let count = grad_out.data().len() / c;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (g, xh) in grad_out.data().chunks_exact(c).zip(cache.x_hat.data().chunks_exact(c)) {
            for k in 0..c {
                sum_dy[k] += g[k];
                sum_dy_xhat[k] += g[k] * xh[k];
            }
        }
        for k in 0..c {
            self.grad_beta[k] += sum_dy[k];
            self.grad_gamma[k] += sum_dy_xhat[k];
        }
        let mut grad_in = grad_out.clone();
        match cache.mode {
            Mode::Train => {
                let m = count as f64;
                for (gi, xh) in grad_in.data_mut().chunks_exact_mut(c).zip(cache.x_hat.data().chunks_exact(c)) {
                    for k in 0..c {
                        let scale = self.gamma[k] * cache.inv_std[k] / m;
                        gi[k] = scale * (m * gi[k] - sum_dy[k] - xh[k] * sum_dy_xhat[k]);
                    }
                }
            }
            Mode::Infer => {
                for gi in grad_in.data_mut().chunks_exact_mut(c) {
                    for k in 0..c {
                        gi[k] *= self.gamma[k] * cache.inv_std[k];
                    }
                }
            }
        }
        Ok(grad_in)
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.iter_mut().for_each(|g| *g = 0.0);
        self.grad_beta.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
