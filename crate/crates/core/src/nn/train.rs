use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::mse_loss;
use super::network::{images_to_tensor, Layer};
use super::optim::Adam;
use super::{derive_seed, Mode, Network, NnError, Tensor4};
use crate::imaging::GaitImage;

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
}

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate towards zero at the last epoch.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let progress = epoch as f64 / epochs as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(format!("unknown schedule `{other}` (expected constant or cosine)")),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            schedule: LrSchedule::Constant,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: &str| Err(NnError::InvalidConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decays must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    /// Mean training MSE per epoch.
    pub history: Vec<f64>,
}

/// Splits `0..n` (in shuffled order) into batches, folding a trailing
/// single-item batch into its predecessor so batch norm always sees ≥ 2 items.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("at least one batch") = &order[start..];
    }
    out
}

/// Mini-batch Adam on MSE over standardized targets. Images must already be
/// normalized and labelled.
///
/// A non-finite loss or gradient aborts with [`NnError::Divergence`], carrying the network
/// as it was after the last completed epoch.
pub fn train(mut net: Network, images: &[GaitImage], cfg: &TrainConfig) -> Result<TrainOutcome, NnError> {
    cfg.validate()?;
    if images.len() < 2 {
        return Err(NnError::EmptyTrainingSet);
    }
    let raw: Vec<f64> = images
        .iter()
        .enumerate()
        .map(|(i, img)| match img.label {
            Some(y) if y.is_finite() => Ok(y),
            _ => Err(NnError::InvalidConfig(format!("image {i} has no finite label"))),
        })
        .collect::<Result<_, _>>()?;
    let scale = TargetScale::fit(&raw);
    let labels: Vec<f64> = raw.iter().map(|y| scale.forward(*y)).collect();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    net.reseed_dropout(derive_seed(cfg.seed, 1));
    let mut opt = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut checkpoint = net.clone();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        opt.lr = cfg.schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        let mut total = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let items: Vec<GaitImage> = batch.iter().map(|&i| images[i].clone()).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| labels[i]).collect();
            let x = images_to_tensor(&items);
            net.zero_grad();
            let pred = net.forward(&x, Mode::Train)?;
            let (loss, grad) = mse_loss(pred.data(), &targets)?;
            let finite = loss.is_finite() && {
                net.backward(&Tensor4::from_vec(pred.shape(), grad)?)?;
                net.params_mut().iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
            };
            if !finite {
                history.push(if loss.is_finite() { f64::NAN } else { loss });
                scale.fold_into(&mut checkpoint);
                return Err(NnError::Divergence { epoch, history, checkpoint: Box::new(checkpoint) });
            }
            total += loss * batch.len() as f64;
            opt.step(&mut net);
        }
        let epoch_loss = total / images.len() as f64;
        log::debug!("epoch {} loss {epoch_loss:.6}", epoch + 1);
        history.push(epoch_loss);
        net.clear_cache();
        checkpoint = net.clone();
    }
    scale.fold_into(&mut net);
    Ok(TrainOutcome { network: net, history })
}

/// Training targets are standardized; the inverse map is folded into the
/// output layer afterwards so the network predicts raw labels.
#[derive(Debug, Clone, Copy)]
struct TargetScale {
    mean: f64,
    std: f64,
}

impl TargetScale {
    fn fit(labels: &[f64]) -> Self {
        let n = labels.len() as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let std = (labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        let std = if std.is_finite() && std > 1e-12 { std } else { 1.0 };
        TargetScale { mean, std }
    }

    fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    fn fold_into(&self, net: &mut Network) {
        if let Some(Layer::Dense(d)) = net.layers.last_mut() {
            d.weights.iter_mut().for_each(|w| *w *= self.std);
            d.bias.iter_mut().for_each(|b| *b = *b * self.std + self.mean);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::IMAGE_LEN;

    fn image(pixels: [f64; IMAGE_LEN], label: f64) -> GaitImage {
        GaitImage { pixels, label: Some(label), subject_id: "s".into(), recording: "r".into(), start_ns: 0 }
    }

    fn pattern(seed: usize) -> [f64; IMAGE_LEN] {
        std::array::from_fn(|i| (((i * 7 + seed * 13) % 11) as f64 - 5.0) / 5.0)
    }

    #[test]
    fn batching_merges_singletons() {
        let order: Vec<usize> = (0..129).collect();
        let b = batches(&order, 64);
        assert_eq!(b.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![64, 65]);
        let order: Vec<usize> = (0..130).collect();
        assert_eq!(batches(&order, 64).len(), 3);
        let order: Vec<usize> = (0..5).collect();
        assert_eq!(batches(&order, 64).len(), 1);
    }

    #[test]
    fn memorizes_single_image() {
        let img = image(pattern(1), 1.0);
        let data = vec![img.clone(); 200];
        let cfg = TrainConfig { epochs: 100, batch_size: 16, schedule: LrSchedule::Cosine, seed: 3, ..TrainConfig::default() };
        let out = train(Network::speed_cnn(3), &data, &cfg).unwrap();
        let pred = out.network.predict(&[img]).unwrap()[0];
        assert!((pred - 1.0).abs() < 0.01, "{pred}");
    }

    #[test]
    fn fits_two_patterns() {
        let a = image([0.5; IMAGE_LEN], 0.5);
        let b = image(pattern(4), 1.5);
        let data: Vec<GaitImage> = (0..128).map(|i| if i % 2 == 0 { a.clone() } else { b.clone() }).collect();
        let cfg = TrainConfig { epochs: 100, batch_size: 16, schedule: LrSchedule::Cosine, seed: 9, ..TrainConfig::default() };
        let out = train(Network::speed_cnn(9), &data, &cfg).unwrap();
        let pred = out.network.predict(&[a, b]).unwrap();
        assert!((pred[0] - 0.5).abs() < 0.05, "{pred:?}");
        assert!((pred[1] - 1.5).abs() < 0.05, "{pred:?}");
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(LrSchedule::Cosine.rate(1e-3, 0, 10), 1e-3);
        assert!((LrSchedule::Cosine.rate(1e-3, 5, 10) - 5e-4).abs() < 1e-15);
        assert!(LrSchedule::Cosine.rate(1e-3, 9, 10) < 3e-5);
        assert_eq!(LrSchedule::Constant.rate(1e-3, 9, 10), 1e-3);
        assert_eq!("cosine".parse::<LrSchedule>(), Ok(LrSchedule::Cosine));
    }

    #[test]
    fn same_seed_same_history() {
        let data: Vec<GaitImage> = (0..40).map(|i| image(pattern(i), 0.5 + (i % 5) as f64 * 0.2)).collect();
        let cfg = TrainConfig { epochs: 3, batch_size: 16, seed: 11, ..TrainConfig::default() };
        let a = train(Network::speed_cnn(11), &data, &cfg).unwrap();
        let b = train(Network::speed_cnn(11), &data, &cfg).unwrap();
        assert_eq!(
            a.history.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.history.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn divergence_returns_checkpoint() {
        let data: Vec<GaitImage> = (0..8).map(|i| image(pattern(i), 1.0)).collect();
        let mut poisoned = data.clone();
        poisoned[3].pixels[7] = f64::NAN;
        let cfg = TrainConfig { epochs: 2, batch_size: 4, seed: 1, ..TrainConfig::default() };
        let net = Network::speed_cnn(1);
        let mut expected = net.clone();
        expected.reseed_dropout(derive_seed(1, 1));
        TargetScale { mean: 1.0, std: 1.0 }.fold_into(&mut expected);
        match train(net, &poisoned, &cfg) {
            Err(NnError::Divergence { epoch, checkpoint, .. }) => {
                assert_eq!(epoch, 0);
                assert_eq!(*checkpoint, expected);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let data = vec![image(pattern(0), 1.0); 4];
        let cfg = TrainConfig { batch_size: 1, ..TrainConfig::default() };
        assert!(matches!(train(Network::speed_cnn(0), &data, &cfg), Err(NnError::InvalidConfig(_))));
        let unlabeled = vec![GaitImage { label: None, ..data[0].clone() }; 4];
        assert!(matches!(
            train(Network::speed_cnn(0), &unlabeled, &TrainConfig::default()),
            Err(NnError::InvalidConfig(_))
        ));
        let infinite = vec![GaitImage { label: Some(f64::INFINITY), ..data[0].clone() }; 4];
        assert!(matches!(
            train(Network::speed_cnn(0), &infinite, &TrainConfig::default()),
            Err(NnError::InvalidConfig(_))
        ));
    }
}
