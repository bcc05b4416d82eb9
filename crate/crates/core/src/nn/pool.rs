use super::{NnError, Tensor4};

/// 2×2 max pooling, stride 1, no padding: output is `(h - 1) × (w - 1)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaxPool {
    /// Flat input index of each output's maximum.
    argmax: Vec<usize>,
    input_shape: Option<[usize; 4]>,
}

impl MaxPool {
    pub fn new() -> Self {
        MaxPool::default()
    }

    pub fn output_shape(input: [usize; 4]) -> Result<[usize; 4], NnError> {
        let [n, h, w, c] = input;
        if h < 2 || w < 2 {
            return Err(NnError::InputTooSmall { h, w });
        }
        Ok([n, h - 1, w - 1, c])
    }

    /// Ties go to the first element of the window in row-major order.
    pub fn forward(&mut self, input: &Tensor4) -> Result<Tensor4, NnError> {
        let out_shape = Self::output_shape(input.shape())?;
        let [n, oh, ow, c] = out_shape;
        let mut out = Tensor4::zeros(out_shape);
        self.argmax.clear();
        self.argmax.reserve(out.data().len());
        let x = input.data();
        for b in 0..n {
            for i in 0..oh {
                for j in 0..ow {
                    for k in 0..c {
                        let mut best = input.index(b, i, j, k);
                        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = input.index(b, i + di, j + dj, k);
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                        let o = out.index(b, i, j, k);
                        out.data_mut()[o] = x[best];
                        self.argmax.push(best);
                    }
                }
            }
        }
        self.input_shape = Some(input.shape());
        Ok(out)
    }

    pub fn infer(input: &Tensor4) -> Result<Tensor4, NnError> {
        let out_shape = Self::output_shape(input.shape())?;
        let [n, oh, ow, c] = out_shape;
        let mut out = Tensor4::zeros(out_shape);
        for b in 0..n {
            for i in 0..oh {
                for j in 0..ow {
                    for k in 0..c {
                        let m = input
                            .get(b, i, j, k)
                            .max(input.get(b, i, j + 1, k))
                            .max(input.get(b, i + 1, j, k))
                            .max(input.get(b, i + 1, j + 1, k));
                        let o = out.index(b, i, j, k);
                        out.data_mut()[o] = m;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, grad_out: &Tensor4) -> Result<Tensor4, NnError> {
        let shape = self.input_shape.ok_or(NnError::NoForwardCache("maxpool"))?;
        if grad_out.data().len() != self.argmax.len() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} gradients", self.argmax.len()),
                got: grad_out.data().len().to_string(),
            });
        }
        let mut grad_in = Tensor4::zeros(shape);
        let gx = grad_in.data_mut();
        for (g, &idx) in grad_out.data().iter().zip(&self.argmax) {
            gx[idx] += g;
        }
        Ok(grad_in)
    }

    /// Selected input index per output from the last forward pass.
    pub fn pattern(&self) -> &[usize] {
        &self.argmax
    }

    pub fn clear_cache(&mut self) {
        self.argmax.clear();
        self.input_shape = None;
    }
}
