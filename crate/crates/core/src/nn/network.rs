use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::activation::{Dropout, Relu, DEFAULT_DROPOUT_RATE};
use super::batchnorm::BatchNorm;
use super::conv::Conv2d;
use super::dense::Dense;
use super::pool::MaxPool;
use super::{derive_seed, Mode, NnError, Tensor4};
use crate::imaging::{GaitImage, IMAGE_COLS, IMAGE_LEN, IMAGE_ROWS};

/// Filters per convolution group.
pub const FILTERS: [usize; 4] = [16, 32, 48, 64];

/// Input shape as (height, width, channels).
pub const INPUT_SHAPE: [usize; 3] = [IMAGE_ROWS, IMAGE_COLS, 1];

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Relu(Relu),
    MaxPool(MaxPool),
    Dropout(Dropout),
    Dense(Dense),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::Dropout(_) => "dropout",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4], NnError> {
        match self {
            Layer::Conv(c) => {
                if input[3] != c.in_ch {
                    return Err(NnError::ShapeMismatch {
                        expected: format!("{} channels", c.in_ch),
                        got: input[3].to_string(),
                    });
                }
                Ok(c.output_shape(input))
            }
            Layer::BatchNorm(b) if input[3] != b.channels => Err(NnError::ShapeMismatch {
                expected: format!("{} channels", b.channels),
                got: input[3].to_string(),
            }),
            Layer::MaxPool(_) => MaxPool::output_shape(input),
            Layer::Dense(d) => {
                let features = input[1] * input[2] * input[3];
                if features != d.in_features {
                    return Err(NnError::ShapeMismatch {
                        expected: format!("{} features", d.in_features),
                        got: features.to_string(),
                    });
                }
                Ok([input[0], 1, 1, d.out_features])
            }
            _ => Ok(input),
        }
    }

    pub fn forward(&mut self, input: &Tensor4, mode: Mode) -> Result<Tensor4, NnError> {
        match self {
            Layer::Conv(c) => c.forward(input),
            Layer::BatchNorm(b) => b.forward(input, mode),
            Layer::Relu(r) => Ok(r.forward(input)),
            Layer::MaxPool(p) => p.forward(input),
            Layer::Dropout(d) => Ok(d.forward(input, mode)),
            Layer::Dense(d) => d.forward(input),
        }
    }

    /// Inference-mode forward pass that leaves the layer untouched.
    pub fn infer(&self, input: &Tensor4) -> Result<Tensor4, NnError> {
        match self {
            Layer::Conv(c) => c.infer(input),
            Layer::BatchNorm(b) => b.infer(input),
            Layer::Relu(_) => Ok(Relu::infer(input)),
            Layer::MaxPool(_) => MaxPool::infer(input),
            Layer::Dropout(_) => Ok(input.clone()),
            Layer::Dense(d) => d.infer(input),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4, NnError> {
        match self {
            Layer::Conv(c) => c.backward(grad_out),
            Layer::BatchNorm(b) => b.backward(grad_out),
            Layer::Relu(r) => r.backward(grad_out),
            Layer::MaxPool(p) => p.backward(grad_out),
            Layer::Dropout(d) => Ok(d.backward(grad_out)),
            Layer::Dense(d) => d.backward(grad_out),
        }
    }

    /// Learnable parameters paired with their accumulated gradients.
    pub fn params_mut(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        match self {
            Layer::Conv(c) => vec![(&mut c.weights[..], &mut c.grad_weights[..]), (&mut c.bias[..], &mut c.grad_bias[..])],
            Layer::BatchNorm(b) => {
                vec![(&mut b.gamma[..], &mut b.grad_gamma[..]), (&mut b.beta[..], &mut b.grad_beta[..])]
            }
            Layer::Dense(d) => vec![(&mut d.weights[..], &mut d.grad_weights[..]), (&mut d.bias[..], &mut d.grad_bias[..])],
            _ => Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        match self {
            Layer::Conv(c) => c.zero_grad(),
            Layer::BatchNorm(b) => b.zero_grad(),
            Layer::Dense(d) => d.zero_grad(),
            _ => {}
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(c) => c.clear_cache(),
            Layer::BatchNorm(b) => b.clear_cache(),
            Layer::Relu(r) => r.clear_cache(),
            Layer::MaxPool(p) => p.clear_cache(),
            Layer::Dropout(d) => d.clear_cache(),
            Layer::Dense(d) => d.clear_cache(),
        }
    }

    /// Short description used in the architecture fingerprint.
    pub fn describe(&self) -> String {
        match self {
            Layer::Conv(c) => format!("conv2x2({}->{})", c.in_ch, c.out_ch),
            Layer::BatchNorm(b) => format!("bn({})", b.channels),
            Layer::Relu(_) => "relu".into(),
            Layer::MaxPool(_) => "maxpool2x2".into(),
            Layer::Dropout(d) => format!("dropout({})", d.rate()),
            Layer::Dense(d) => format!("fc({}->{})", d.in_features, d.out_features),
        }
    }
}

/// Ordered layer stack for 45×4×1 gait images with a scalar regression output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    /// Four conv-bn-relu groups with (16, 32, 48, 64) 2×2 filters, max pooling
    /// after the first three, then dropout and a single-output dense layer.
    /// Convolutions use "same" padding and pools are valid.
    pub fn speed_cnn(seed: u64) -> Self {
        Self::with_dropout(seed, DEFAULT_DROPOUT_RATE).expect("default dropout rate is valid")
    }

    /// The same architecture with a different dropout rate before the dense layer.
    pub fn with_dropout(seed: u64, dropout_rate: f64) -> Result<Self, NnError> {
        let dropout = Dropout::new(dropout_rate, derive_seed(seed, 1))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
        let mut layers = Vec::new();
        let mut in_ch = INPUT_SHAPE[2];
        for (group, &filters) in FILTERS.iter().enumerate() {
            let mut conv = Conv2d::new(in_ch, filters);
            conv.init(&mut rng);
            layers.push(Layer::Conv(conv));
            layers.push(Layer::BatchNorm(BatchNorm::new(filters)));
            layers.push(Layer::Relu(Relu::new()));
            if group < FILTERS.len() - 1 {
                layers.push(Layer::MaxPool(MaxPool::new()));
            }
            in_ch = filters;
        }
        layers.push(Layer::Dropout(dropout));
        let mut fc = Dense::new(flat_features(), 1);
        fc.init(&mut rng);
        layers.push(Layer::Dense(fc));

        let net = Network { layers };
        let chain = net.shape_chain().expect("architecture shapes chain");
        assert_eq!(chain.last().map(|(_, s)| *s), Some([1, 1, 1, 1]), "scalar output");
        Ok(net)
    }

    /// Output shape after every layer for a single input image.
    pub fn shape_chain(&self) -> Result<Vec<(String, [usize; 4])>, NnError> {
        let mut shape = [1, INPUT_SHAPE[0], INPUT_SHAPE[1], INPUT_SHAPE[2]];
        let mut chain = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(shape)?;
            chain.push((layer.describe(), shape));
        }
        Ok(chain)
    }

    /// One-line architecture description stored in model files.
    pub fn fingerprint(&self) -> String {
        let layers: Vec<String> = self.layers.iter().map(Layer::describe).collect();
        format!(
            "input={}x{}x{} padding=conv:same,pool:valid layers={}",
            INPUT_SHAPE[0],
            INPUT_SHAPE[1],
            INPUT_SHAPE[2],
            layers.join(",")
        )
    }

    pub fn forward(&mut self, input: &Tensor4, mode: Mode) -> Result<Tensor4, NnError> {
        let mut x = self.layers[0].forward(input, mode)?;
        for layer in &mut self.layers[1..] {
            x = layer.forward(&x, mode)?;
            debug_assert!(x.is_finite() || mode == Mode::Train);
        }
        Ok(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4, NnError> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn infer(&self, input: &Tensor4) -> Result<Tensor4, NnError> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    /// Inference on already-normalized images, one scalar each.
    pub fn predict(&self, images: &[GaitImage]) -> Result<Vec<f64>, NnError> {
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            out.extend(self.infer(&images_to_tensor(chunk))?.into_vec());
        }
        Ok(out)
    }

    /// ReLU signs and pooling selections from the last training forward pass;
    /// the loss is smooth in a neighbourhood where this does not change.
    pub fn kink_pattern(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Relu(r) => out.extend(r.pattern().into_iter().map(u64::from)),
                Layer::MaxPool(p) => out.extend(p.pattern().iter().map(|i| *i as u64)),
                _ => {}
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn params_mut(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|(p, _)| p.len()).sum()
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        for layer in &mut self.layers {
            if let Layer::Dropout(d) = layer {
                d.reseed(seed);
            }
        }
    }

    pub fn freeze_dropout(&mut self, freeze: bool) {
        for layer in &mut self.layers {
            if let Layer::Dropout(d) = layer {
                d.freeze_mask(freeze);
            }
        }
    }
}

/// Flattened feature count entering the dense layer.
pub fn flat_features() -> usize {
    // Three valid 2×2 stride-1 pools each trim one row and one column.
    let pools = FILTERS.len() - 1;
    (INPUT_SHAPE[0] - pools) * (INPUT_SHAPE[1] - pools) * FILTERS[FILTERS.len() - 1]
}

pub fn images_to_tensor(images: &[GaitImage]) -> Tensor4 {
    let mut data = Vec::with_capacity(images.len() * IMAGE_LEN);
    for img in images {
        data.extend_from_slice(&img.pixels);
    }
    Tensor4::from_vec([images.len(), IMAGE_ROWS, IMAGE_COLS, 1], data).expect("image tensor shape")
}
