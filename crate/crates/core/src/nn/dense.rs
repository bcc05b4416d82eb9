use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{NnError, Tensor4};

/// Fully connected layer over the flattened (h, w, c) item.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// Laid out as `[in][out]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    input: Option<Tensor4>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Dense {
            in_features,
            out_features,
            weights: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
            grad_weights: vec![0.0; in_features * out_features],
            grad_bias: vec![0.0; out_features],
            input: None,
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let dist = Normal::new(0.0, (2.0 / self.in_features as f64).sqrt()).expect("valid std");
        self.weights.iter_mut().for_each(|w| *w = dist.sample(rng));
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn forward(&mut self, input: &Tensor4) -> Result<Tensor4, NnError> {
        let out = self.infer(input)?;
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn infer(&self, input: &Tensor4) -> Result<Tensor4, NnError> {
        if input.item_len() != self.in_features {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} features", self.in_features),
                got: input.item_len().to_string(),
            });
        }
        let n = input.batch();
        let of = self.out_features;
        let mut out = Tensor4::zeros([n, 1, 1, of]);
        for b in 0..n {
            let acc = &mut out.data_mut()[b * of..(b + 1) * of];
            acc.copy_from_slice(&self.bias);
            for (i, x) in input.item(b).iter().enumerate() {
                let wrow = &self.weights[i * of..(i + 1) * of];
                acc.iter_mut().zip(wrow).for_each(|(a, w)| *a += x * w);
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4, NnError> {
        let input = self.input.as_ref().ok_or(NnError::NoForwardCache("dense"))?;
        let n = input.batch();
        let of = self.out_features;
        if grad_out.data().len() != n * of {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} gradients", n * of),
                got: grad_out.data().len().to_string(),
            });
        }
        let mut grad_in = Tensor4::zeros(input.shape());
        let len = input.item_len();
        for b in 0..n {
            let g = &grad_out.data()[b * of..(b + 1) * of];
            self.grad_bias.iter_mut().zip(g).for_each(|(gb, v)| *gb += v);
            let x = input.item(b);
            let gi = &mut grad_in.data_mut()[b * len..(b + 1) * len];
            for i in 0..self.in_features {
                let wrow = &self.weights[i * of..(i + 1) * of];
                let gw = &mut self.grad_weights[i * of..(i + 1) * of];
                gw.iter_mut().zip(g).for_each(|(a, gv)| *a += x[i] * gv);
                gi[i] = wrow.iter().zip(g).map(|(w, gv)| w * gv).sum();
            }
        }
        Ok(grad_in)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.iter_mut().for_each(|g| *g = 0.0);
        self.grad_bias.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NnError::ShapeMismatch { expected: format!("{} targets", pred.len()), got: target.len().to_string() });
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

/// Root-mean-squared error with the gradient of the underlying MSE.
pub fn loss_rmse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    let (mse, grad) = mse_loss(pred, target)?;
    Ok((mse.sqrt(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        let (l, g) = loss_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        let (mse, _) = mse_loss(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(mse, 2.5);
        let (rmse, g) = loss_rmse(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(rmse, 2.5f64.sqrt());
        assert_eq!(g, vec![1.0, 2.0]);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn dense_affine() {
        let mut d = Dense::new(3, 1);
        d.weights = vec![1.0, -2.0, 0.5];
        d.bias = vec![0.25];
        let out = d.infer(&Tensor4::from_vec([2, 1, 3, 1], vec![1.0, 1.0, 2.0, 0.0, 1.0, 4.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.25, 0.25]);
    }
}
