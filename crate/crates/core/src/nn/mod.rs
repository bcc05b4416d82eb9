//! Small tensor/layer engine for the speed-regression CNN, with manual
//! backpropagation, Adam and a text model format.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod network;
pub mod optim;
pub mod pool;
pub mod tensor;
pub mod train;

pub use network::Network;
pub use tensor::Tensor4;
pub use train::{train, LrSchedule, TrainConfig, TrainOutcome};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("backward called on {0} without a cached forward pass")]
    NoForwardCache(&'static str),
    #[error("batch normalization needs at least 2 items in train mode, got {0}")]
    BatchTooSmall(usize),
    #[error("pooling input {h}x{w} is smaller than the 2x2 window")]
    InputTooSmall { h: usize, w: usize },
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidDropout(f64),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize, history: Vec<f64>, checkpoint: Box<Network> },
    #[error("corrupt model file: {0}")]
    CorruptModelFile(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl PartialEq for NnError {
    fn eq(&self, other: &Self) -> bool {
        use NnError::*;
        match (self, other) {
            (ShapeMismatch { expected: a, got: b }, ShapeMismatch { expected: c, got: d }) => a == c && b == d,
            (NoForwardCache(a), NoForwardCache(b)) => a == b,
            (BatchTooSmall(a), BatchTooSmall(b)) => a == b,
            (InputTooSmall { h: a, w: b }, InputTooSmall { h: c, w: d }) => a == c && b == d,
            (InvalidDropout(a), InvalidDropout(b)) => a == b,
            (EmptyTrainingSet, EmptyTrainingSet) => true,
            (InvalidConfig(a), InvalidConfig(b)) => a == b,
            (Divergence { epoch: a, history: h1, .. }, Divergence { epoch: b, history: h2, .. }) => a == b && h1 == h2,
            (CorruptModelFile(a), CorruptModelFile(b)) => a == b,
            (Io(a), Io(b)) => a.kind() == b.kind(),
            _ => false,
        }
    }
}

/// Independent RNG stream seed for a given purpose.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined value.
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
