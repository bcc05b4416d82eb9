use super::Network;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam { lr, beta1, beta2, epsilon, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `net`.
    pub fn step(&mut self, net: &mut Network) {
        let params = net.params_mut();
        if self.m.is_empty() {
            self.m = params.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.into_iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::Layer;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * sign(g) (up to epsilon).
        let mut net = Network::speed_cnn(0);
        let before = match &net.layers[0] {
            Layer::Conv(c) => c.weights.clone(),
            _ => unreachable!(),
        };
        if let Layer::Conv(c) = &mut net.layers[0] {
            c.grad_weights.iter_mut().enumerate().for_each(|(i, g)| *g = if i % 2 == 0 { 0.5 } else { -3.0 });
        }
        let mut opt = Adam::new(1e-3, 0.9, 0.999, 1e-8);
        opt.step(&mut net);
        if let Layer::Conv(c) = &net.layers[0] {
            for (i, (a, b)) in c.weights.iter().zip(&before).enumerate() {
                let expected = if i % 2 == 0 { -1e-3 } else { 1e-3 };
                assert!((a - b - expected).abs() < 1e-10);
            }
        }
        assert_eq!(opt.steps(), 1);
    }
}
