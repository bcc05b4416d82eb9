use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{NnError, Tensor4};

pub const KERNEL: usize = 2;

/// 2×2, stride-1 convolution (cross-correlation) with "same" padding.
///
/// For an even kernel the single padding row/column is added at the bottom and
/// right, so output `(i, j)` sees inputs `(i..=i+1, j..=j+1)` and a kernel with a
/// single 1 in its top-left tap reproduces the input exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Laid out as `[ki][kj][in_ch][out_ch]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    input: Option<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
struct Cache {
    shape: [usize; 4],
    cols: Vec<f64>,
}

/// Unrolls every 2×2 neighbourhood (zero beyond the bottom/right edge) into a
/// row laid out as `[ki][kj][c]`, matching the weight layout.
fn im2col(input: &Tensor4) -> Vec<f64> {
    let [n, h, w, c] = input.shape();
    let k = KERNEL * KERNEL * c;
    let x = input.data();
    let mut cols = vec![0.0; n * h * w * k];
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let row = &mut cols[((b * h + i) * w + j) * k..][..k];
                for ki in 0..KERNEL.min(h - i) {
                    for kj in 0..KERNEL.min(w - j) {
                        let x_base = ((b * h + i + ki) * w + j + kj) * c;
                        let t = (ki * KERNEL + kj) * c;
                        row[t..t + c].copy_from_slice(&x[x_base..x_base + c]);
                    }
                }
            }
        }
    }
    cols
}

/// `dst = a · b + beta · dst` for an `m×k` by `k×n` product; operands are
/// given as (data, row stride, column stride).
fn gemm(m: usize, k: usize, n: usize, a: (&[f64], usize, usize), b: (&[f64], usize, usize), beta: f64, dst: &mut [f64]) {
    assert!(a.0.len() >= m * k && b.0.len() >= k * n && dst.len() == m * n);
    // SAFETY: the asserted lengths cover every index reachable through the
    // given strides, and dst does not alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            dst.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize) -> Self {
        let n = KERNEL * KERNEL * in_ch * out_ch;
        Conv2d {
            in_ch,
            out_ch,
            weights: vec![0.0; n],
            bias: vec![0.0; out_ch],
            grad_weights: vec![0.0; n],
            grad_bias: vec![0.0; out_ch],
            input: None,
        }
    }

    /// He-normal weights (variance 2 / fan-in), zero bias.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let fan_in = (KERNEL * KERNEL * self.in_ch) as f64;
        let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        self.weights.iter_mut().for_each(|w| *w = dist.sample(rng));
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    #[inline]
    pub fn tap(&self, ki: usize, kj: usize, c: usize) -> usize {
        ((ki * KERNEL + kj) * self.in_ch + c) * self.out_ch
    }

    pub fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        [input[0], input[1], input[2], self.out_ch]
    }

    pub fn forward(&mut self, input: &Tensor4) -> Result<Tensor4, NnError> {
        self.check(input)?;
        let cols = im2col(input);
        let out = self.apply(input.shape(), &cols);
        self.input = Some(Cache { shape: input.shape(), cols });
        Ok(out)
    }

    /// Forward pass without caching the input.
    pub fn infer(&self, input: &Tensor4) -> Result<Tensor4, NnError> {
        self.check(input)?;
        Ok(self.apply(input.shape(), &im2col(input)))
    }

    fn check(&self, input: &Tensor4) -> Result<(), NnError> {
        let c = input.shape()[3];
        if c != self.in_ch {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} input channels", self.in_ch),
                got: c.to_string(),
            });
        }
        Ok(())
    }

    fn apply(&self, shape: [usize; 4], cols: &[f64]) -> Tensor4 {
        let [n, h, w, _] = shape;
        let rows = n * h * w;
        let k = KERNEL * KERNEL * self.in_ch;
        let oc = self.out_ch;
        let mut out = Tensor4::zeros([n, h, w, oc]);
        for px in out.data_mut().chunks_exact_mut(oc) {
            px.copy_from_slice(&self.bias);
        }
        gemm(rows, k, oc, (cols, k, 1), (&self.weights, oc, 1), 1.0, out.data_mut());
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4, NnError> {
        let cache = self.input.as_ref().ok_or(NnError::NoForwardCache("conv"))?;
        let [n, h, w, c] = cache.shape;
        let oc = self.out_ch;
        if grad_out.shape() != [n, h, w, oc] {
            return Err(NnError::ShapeMismatch {
                expected: format!("{:?}", [n, h, w, oc]),
                got: format!("{:?}", grad_out.shape()),
            });
        }
        let rows = n * h * w;
        let k = KERNEL * KERNEL * c;
        let g = grad_out.data();
        for go in g.chunks_exact(oc) {
            self.grad_bias.iter_mut().zip(go).for_each(|(gb, v)| *gb += v);
        }
        // dW += colsᵀ · G
        gemm(k, rows, oc, (&cache.cols, 1, k), (g, oc, 1), 1.0, &mut self.grad_weights);
        // dcols = G · Wᵀ
        let mut gcols = vec![0.0; rows * k];
        gemm(rows, oc, k, (g, oc, 1), (&self.weights, 1, oc), 0.0, &mut gcols);

        let mut grad_in = Tensor4::zeros(cache.shape);
        let gx = grad_in.data_mut();
        for b in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let row = &gcols[((b * h + i) * w + j) * k..][..k];
                    for ki in 0..KERNEL.min(h - i) {
                        for kj in 0..KERNEL.min(w - j) {
                            let x_base = ((b * h + i + ki) * w + j + kj) * c;
                            let t = (ki * KERNEL + kj) * c;
                            gx[x_base..x_base + c].iter_mut().zip(&row[t..t + c]).for_each(|(a, v)| *a += v);
                        }
                    }
                }
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_only() {
        let mut conv = Conv2d::new(1, 1);
        conv.bias[0] = 7.0;
        let out = conv.infer(&Tensor4::from_vec([1, 45, 4, 1], vec![1.0; 180]).unwrap()).unwrap();
        assert_eq!(out.shape(), [1, 45, 4, 1]);
        assert!(out.data().iter().all(|v| *v == 7.0));
    }

    #[test]
    fn top_left_tap_reproduces_input() {
        // Hand-enumerated 3x3 toy input: with the bottom/right padding convention
        // the top-left tap multiplies x[i][j] itself.
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let mut conv = Conv2d::new(1, 1);
        let t = conv.tap(0, 0, 0);
        conv.weights[t] = 1.0;
        let out = conv.infer(&Tensor4::from_vec([1, 3, 3, 1], x.clone()).unwrap()).unwrap();
        assert_eq!(out.data(), &x[..]);

        // Bottom-right tap shifts up-left and pads with zeros.
        let mut conv = Conv2d::new(1, 1);
        let t = conv.tap(1, 1, 0);
        conv.weights[t] = 1.0;
        let out = conv.infer(&Tensor4::from_vec([1, 3, 3, 1], x).unwrap()).unwrap();
        assert_eq!(out.data(), &[5.0, 6.0, 0.0, 8.0, 9.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn all_ones_kernel_sums_neighbourhood() {
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let mut conv = Conv2d::new(1, 1);
        conv.weights.iter_mut().for_each(|w| *w = 1.0);
        let out = conv.infer(&Tensor4::from_vec([1, 3, 3, 1], x).unwrap()).unwrap();
        assert_eq!(out.data(), &[12.0, 16.0, 9.0, 24.0, 28.0, 15.0, 15.0, 17.0, 9.0]);
    }

    #[test]
    fn channel_mismatch() {
        let mut conv = Conv2d::new(2, 3);
        assert!(matches!(conv.forward(&Tensor4::zeros([1, 4, 4, 1])), Err(NnError::ShapeMismatch { .. })));
    }
}
