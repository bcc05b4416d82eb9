use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mode, NnError, Tensor4};

pub const DEFAULT_DROPOUT_RATE: f64 = 0.2;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relu {
    input: Option<Tensor4>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }

    pub fn forward(&mut self, input: &Tensor4) -> Tensor4 {
        let out = Self::infer(input);
        self.input = Some(input.clone());
        out
    }

    pub fn infer(input: &Tensor4) -> Tensor4 {
        let mut out = input.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        out
    }

    pub fn backward(&self, grad_out: &Tensor4) -> Result<Tensor4, NnError> {
        let input = self.input.as_ref().ok_or(NnError::NoForwardCache("relu"))?;
        let mut g = grad_out.clone();
        for (gv, x) in g.data_mut().iter_mut().zip(input.data()) {
            if *x <= 0.0 {
                *gv = 0.0;
            }
        }
        Ok(g)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }

    /// Which cached inputs were on the active side of the kink.
    pub fn pattern(&self) -> Vec<bool> {
        self.input.as_ref().map(|x| x.data().iter().map(|v| *v > 0.0).collect()).unwrap_or_default()
    }
}

/// Inverted dropout: in training, each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; inference is identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<f64>>,
    freeze: bool,
}

impl PartialEq for Dropout {
    fn eq(&self, other: &Self) -> bool {
        self.rate == other.rate
    }
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidDropout(rate));
        }
        Ok(Dropout { rate, rng: ChaCha8Rng::seed_from_u64(seed), mask: None, freeze: false })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Reuse the current mask on later training passes (for finite-difference checks).
    pub fn freeze_mask(&mut self, freeze: bool) {
        self.freeze = freeze;
    }

    pub fn forward(&mut self, input: &Tensor4, mode: Mode) -> Tensor4 {
        if mode == Mode::Infer || self.rate == 0.0 {
            self.mask = None;
            return input.clone();
        }
        let reuse = self.freeze && self.mask.as_ref().is_some_and(|m| m.len() == input.data().len());
        if !reuse {
            let keep = 1.0 / (1.0 - self.rate);
            let rate = self.rate;
            let rng = &mut self.rng;
            self.mask = Some(
                (0..input.data().len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect(),
            );
        }
        let mask = self.mask.as_ref().expect("mask set above");
        let mut out = input.clone();
        out.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        out
    }

    pub fn backward(&self, grad_out: &Tensor4) -> Tensor4 {
        let mut g = grad_out.clone();
        if let Some(mask) = &self.mask {
            g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        g
    }

    pub fn clear_cache(&mut self) {
        if !self.freeze {
            self.mask = None;
        }
    }
}
