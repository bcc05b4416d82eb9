//! Offline training, online prediction and the three experiments (per-subject
//! breakdown, sensor ablation, image-count sweep) as report-producing jobs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DataError, Recording};
use crate::imaging::{
    build_split, fit_normalizer, recording_images, ChannelSet, DatasetSplit, GaitImage, ImagingError, Normalizer,
    Preprocessor,
};
use crate::model::{SpeedModel, TrainingInfo};
use crate::nn::activation::DEFAULT_DROPOUT_RATE;
use crate::nn::{derive_seed, train, Network, NnError, TrainConfig};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const DEFAULT_TRAIN_OVERLAP: f64 = 0.5;

/// RNG stream for the training-image subsample.
const SUBSAMPLE_STREAM: u64 = 30;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("requested {requested} training images but only {available} are available")]
    InsufficientImages { requested: usize, available: usize },
    #[error("evaluation split is empty")]
    EmptyEvaluation,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed report: {reason}")]
    BadReport { path: PathBuf, reason: String },
}

/// Everything that determines a training run besides the recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub channels: ChannelSet,
    /// Training image budget M; `None` uses every training image.
    pub budget: Option<usize>,
    pub train: TrainConfig,
    pub preprocessor: Preprocessor,
    pub train_fraction: f64,
    pub train_overlap: f64,
    /// One model per subject instead of one pooled model.
    pub per_subject: bool,
    pub dropout: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            channels: ChannelSet::Both,
            budget: None,
            train: TrainConfig::default(),
            preprocessor: Preprocessor::default(),
            train_fraction: DEFAULT_TRAIN_FRACTION,
            train_overlap: DEFAULT_TRAIN_OVERLAP,
            per_subject: false,
            dropout: DEFAULT_DROPOUT_RATE,
        }
    }
}

impl ExperimentConfig {
    /// Stable one-line rendering of every setting; hashed into reports.
    pub fn canonical(&self) -> String {
        let t = &self.train;
        let p = &self.preprocessor;
        format!(
            "channels={} m={} epochs={} batch={} lr={:e} beta1={:e} beta2={:e} eps={:e} schedule={} seed={} \
             cutoff={:e} taps={} window={:e} split={:e} overlap={:e} per_subject={} dropout={:e}",
            self.channels.as_str(),
            budget_str(self.budget),
            t.epochs,
            t.batch_size,
            t.learning_rate,
            t.beta1,
            t.beta2,
            t.epsilon,
            t.schedule.as_str(),
            t.seed,
            p.cutoff_hz,
            p.num_taps,
            p.window_seconds,
            self.train_fraction,
            self.train_overlap,
            self.per_subject,
            self.dropout,
        )
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            write!(s, "{b:02x}").expect("write to string");
            s
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(PipelineError::InvalidConfig(format!("split fraction {} not in (0, 1)", self.train_fraction)));
        }
        if self.budget == Some(0) {
            return Err(PipelineError::InvalidConfig("image budget must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(PipelineError::InvalidConfig(format!("dropout rate {} not in [0, 1)", self.dropout)));
        }
        self.train.validate()?;
        Ok(())
    }
}

fn budget_str(budget: Option<usize>) -> String {
    budget.map_or_else(|| "all".to_string(), |m| m.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPrediction {
    pub subject_id: String,
    /// In memory only; the report CSV has no recording column.
    pub recording: String,
    pub start_ns: i64,
    pub true_mps: f64,
    pub pred_mps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub experiment: String,
    pub channels: ChannelSet,
    pub budget: Option<usize>,
    pub train_images: usize,
    pub seed: u64,
    pub config_hash: String,
    pub diverged: bool,
    pub per_subject_rmse: BTreeMap<String, f64>,
    pub aggregate_rmse: f64,
    pub windows: Vec<WindowPrediction>,
}

pub fn rmse(pairs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let (sum, n) = pairs.into_iter().fold((0.0, 0usize), |(s, n), (t, p)| (s + (p - t) * (p - t), n + 1));
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

impl EvaluationReport {
    /// Fills in the RMSE fields from `windows`.
    fn summarize(&mut self) {
        self.aggregate_rmse = rmse(self.windows.iter().map(|w| (w.true_mps, w.pred_mps)));
        let mut by_subject: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for w in &self.windows {
            by_subject.entry(w.subject_id.clone()).or_default().push((w.true_mps, w.pred_mps));
        }
        self.per_subject_rmse = by_subject.into_iter().map(|(s, pairs)| (s, rmse(pairs))).collect();
    }

    /// Largest minus smallest per-subject RMSE.
    pub fn subject_spread(&self) -> f64 {
        let values = self.per_subject_rmse.values();
        let max = values.clone().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let min = values.fold(f64::INFINITY, |a, &b| a.min(b));
        max - min
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(out, "{k}={v}").expect("write to string");
        kv("experiment", &self.experiment);
        kv("channels", &self.channels.as_str());
        kv("m", &budget_str(self.budget));
        kv("train_images", &self.train_images);
        kv("eval_windows", &self.windows.len());
        kv("seed", &self.seed);
        kv("config_hash", &self.config_hash);
        kv("diverged", &self.diverged);
        kv("aggregate_rmse_mps", &self.aggregate_rmse);
        for (subject, r) in &self.per_subject_rmse {
            kv(&format!("subject_rmse_mps.{subject}"), r);
        }
        out.push_str("subject_id,window_start_ns,true_mps,pred_mps\n");
        for w in &self.windows {
            writeln!(out, "{},{},{},{}", w.subject_id, w.start_ns, w.true_mps, w.pred_mps).expect("write to string");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, self.to_text()).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
        Self::from_text(&text).map_err(|reason| PipelineError::BadReport { path: path.to_path_buf(), reason })
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut header = BTreeMap::new();
        let mut lines = text.lines();
        for line in lines.by_ref() {
            if line == "subject_id,window_start_ns,true_mps,pred_mps" {
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("bad header line `{line}`"))?;
            header.insert(k.to_string(), v.to_string());
        }
        let field = |k: &str| header.get(k).ok_or_else(|| format!("missing `{k}`"));
        let num = |k: &str| -> Result<f64, String> { field(k)?.parse().map_err(|_| format!("bad `{k}`")) };
        let mut windows = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split(',').collect();
            let [subject, start, t, p] = parts[..] else {
                return Err(format!("bad row `{line}`"));
            };
            let f = |s: &str| s.parse::<f64>().map_err(|_| format!("bad row `{line}`"));
            windows.push(WindowPrediction {
                subject_id: subject.to_string(),
                recording: String::new(),
                start_ns: start.parse().map_err(|_| format!("bad row `{line}`"))?,
                true_mps: f(t)?,
                pred_mps: f(p)?,
            });
        }
        let per_subject_rmse = header
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("subject_rmse_mps.").map(|s| (s.to_string(), v)))
            .map(|(s, v)| v.parse().map(|r| (s, r)).map_err(|_| "bad subject rmse".to_string()))
            .collect::<Result<_, _>>()?;
        let budget = match field("m")?.as_str() {
            "all" => None,
            m => Some(m.parse().map_err(|_| "bad `m`".to_string())?),
        };
        Ok(EvaluationReport {
            experiment: field("experiment")?.clone(),
            channels: field("channels")?.parse().map_err(|_| "bad `channels`".to_string())?,
            budget,
            train_images: num("train_images")? as usize,
            seed: field("seed")?.parse().map_err(|_| "bad `seed`".to_string())?,
            config_hash: field("config_hash")?.clone(),
            diverged: field("diverged")? == "true",
            per_subject_rmse,
            aggregate_rmse: num("aggregate_rmse_mps")?,
            windows,
        })
    }
}

/// `arm,rmse_mps` comparison table.
pub fn comparison_table<'a>(rows: impl IntoIterator<Item = (String, &'a EvaluationReport)>) -> String {
    let mut out = String::from("arm,rmse_mps\n");
    for (arm, report) in rows {
        writeln!(out, "{arm},{}", report.aggregate_rmse).expect("write to string");
    }
    out
}

/// One trained model and the key it serves: `pooled` or a subject id.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub models: Vec<(String, SpeedModel)>,
    pub report: EvaluationReport,
    pub histories: Vec<Vec<f64>>,
}

impl TrainingRun {
    pub fn diverged(&self) -> bool {
        self.report.diverged
    }
}

pub const POOLED: &str = "pooled";

/// Seeded uniform subsample without replacement; keeps the original order.
pub fn subsample(images: Vec<GaitImage>, budget: Option<usize>, seed: u64) -> Result<Vec<GaitImage>, PipelineError> {
    let Some(m) = budget else { return Ok(images) };
    if m > images.len() {
        return Err(PipelineError::InsufficientImages { requested: m, available: images.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SUBSAMPLE_STREAM));
    let mut picks = sample(&mut rng, images.len(), m).into_vec();
    picks.sort_unstable();
    let mut keep = vec![false; images.len()];
    for i in picks {
        keep[i] = true;
    }
    Ok(images.into_iter().zip(keep).filter_map(|(img, k)| k.then_some(img)).collect())
}

pub fn prepare_split(recordings: &[Recording], cfg: &ExperimentConfig) -> Result<DatasetSplit, PipelineError> {
    cfg.validate()?;
    let split =
        build_split(recordings, cfg.channels, cfg.train_overlap, cfg.train_fraction, &cfg.preprocessor)?;
    if split.eval.is_empty() {
        return Err(PipelineError::EmptyEvaluation);
    }
    Ok(split)
}

/// Trains one model. Divergence is not an error here: the last finite
/// checkpoint comes back with the flag set.
fn fit_model(
    images: &[GaitImage],
    normalizer: &Normalizer,
    cfg: &ExperimentConfig,
) -> Result<(SpeedModel, Vec<f64>, bool), PipelineError> {
    let normalized: Vec<GaitImage> = images.iter().map(|img| normalizer.apply(img)).collect();
    let net = Network::with_dropout(cfg.train.seed, cfg.dropout)?;
    let (network, history, diverged) = match train(net, &normalized, &cfg.train) {
        Ok(outcome) => (outcome.network, outcome.history, false),
        Err(NnError::Divergence { epoch, history, checkpoint }) => {
            log::warn!("training diverged at epoch {epoch}; keeping last finite checkpoint");
            (*checkpoint, history, true)
        }
        Err(e) => return Err(e.into()),
    };
    let model = SpeedModel {
        network,
        normalizer: normalizer.clone(),
        channels: cfg.channels,
        preprocessor: cfg.preprocessor.clone(),
        info: TrainingInfo { seed: cfg.train.seed, train_images: images.len(), config_hash: cfg.hash() },
    };
    Ok((model, history, diverged))
}

/// Predictions for labelled evaluation images, in input order.
pub fn evaluate_images(model: &SpeedModel, images: &[GaitImage]) -> Result<Vec<WindowPrediction>, PipelineError> {
    let preds = model.predict(images)?;
    images
        .iter()
        .zip(preds)
        .map(|(img, pred)| {
            let true_mps = img.label.ok_or_else(|| PipelineError::InvalidConfig("unlabelled evaluation image".into()))?;
            Ok(WindowPrediction {
                subject_id: img.subject_id.clone(),
                recording: img.recording.clone(),
                start_ns: img.start_ns,
                true_mps,
                pred_mps: pred,
            })
        })
        .collect()
}

/// Builds a report from evaluating `model` on `eval`.
pub fn evaluation_report(
    experiment: &str,
    model: &SpeedModel,
    eval: &[GaitImage],
    budget: Option<usize>,
) -> Result<EvaluationReport, PipelineError> {
    if eval.is_empty() {
        return Err(PipelineError::EmptyEvaluation);
    }
    let mut report = EvaluationReport {
        experiment: experiment.to_string(),
        channels: model.channels,
        budget,
        train_images: model.info.train_images,
        seed: model.info.seed,
        config_hash: model.info.config_hash.clone(),
        diverged: false,
        per_subject_rmse: BTreeMap::new(),
        aggregate_rmse: 0.0,
        windows: evaluate_images(model, eval)?,
    };
    report.summarize();
    Ok(report)
}

/// Offline path on a prepared split: normalizer from the full training
/// portion, M-subsample, train, evaluate on the held-out windows.
pub fn train_on_split(split: &DatasetSplit, cfg: &ExperimentConfig) -> Result<TrainingRun, PipelineError> {
    cfg.validate()?;
    let normalizer = fit_normalizer(&split.train)?;
    let train_images = subsample(split.train.clone(), cfg.budget, cfg.train.seed)?;
    log::info!("training on {} of {} images ({})", train_images.len(), split.train.len(), cfg.canonical());

    let groups: Vec<(String, Vec<GaitImage>, Vec<GaitImage>)> = if cfg.per_subject {
        let mut by_subject: BTreeMap<String, (Vec<GaitImage>, Vec<GaitImage>)> = BTreeMap::new();
        for img in train_images {
            by_subject.entry(img.subject_id.clone()).or_default().0.push(img);
        }
        for img in &split.eval {
            by_subject.entry(img.subject_id.clone()).or_default().1.push(img.clone());
        }
        by_subject.into_iter().map(|(s, (t, e))| (s, t, e)).collect()
    } else {
        vec![(POOLED.to_string(), train_images, split.eval.clone())]
    };

    let mut run = TrainingRun {
        models: Vec::new(),
        report: EvaluationReport {
            experiment: if cfg.per_subject { "training:per-subject" } else { "training" }.to_string(),
            channels: cfg.channels,
            budget: cfg.budget,
            train_images: 0,
            seed: cfg.train.seed,
            config_hash: cfg.hash(),
            diverged: false,
            per_subject_rmse: BTreeMap::new(),
            aggregate_rmse: 0.0,
            windows: Vec::new(),
        },
        histories: Vec::new(),
    };
    for (key, train_set, eval_set) in groups {
        if train_set.len() < 2 {
            return Err(PipelineError::InsufficientImages { requested: 2, available: train_set.len() });
        }
        let (model, history, diverged) = fit_model(&train_set, &normalizer, cfg)?;
        run.report.train_images += train_set.len();
        run.report.diverged |= diverged;
        run.report.windows.extend(evaluate_images(&model, &eval_set)?);
        run.histories.push(history);
        run.models.push((key, model));
    }
    run.report.summarize();
    Ok(run)
}

/// Offline path: dataset, normalizer, subsample, train, evaluate.
pub fn run_training(recordings: &[Recording], cfg: &ExperimentConfig) -> Result<TrainingRun, PipelineError> {
    let split = prepare_split(recordings, cfg)?;
    train_on_split(&split, cfg)
}

/// Online path: one prediction per consecutive non-overlapping window.
pub fn run_prediction(model: &SpeedModel, recording: &Recording) -> Result<Vec<(i64, f64)>, PipelineError> {
    let window_len = model.preprocessor.window_len(recording.sample_rate);
    if recording.len() < window_len {
        return Err(ImagingError::WindowTooShort(recording.len()).into());
    }
    let images = recording_images(recording, model.channels, 0.0, &model.preprocessor)?;
    let preds = model.predict(&images)?;
    Ok(images.iter().map(|img| img.start_ns).zip(preds).collect())
}

pub const ABLATION_ARMS: [ChannelSet; 3] = [ChannelSet::Acc, ChannelSet::Gyro, ChannelSet::Both];

#[derive(Debug, Clone)]
pub struct AblationResult {
    /// In `ABLATION_ARMS` order.
    pub reports: Vec<EvaluationReport>,
}

impl AblationResult {
    pub fn report(&self, channels: ChannelSet) -> &EvaluationReport {
        &self.reports[ABLATION_ARMS.iter().position(|&c| c == channels).expect("every arm present")]
    }

    pub fn table(&self) -> String {
        comparison_table(self.reports.iter().map(|r| (r.channels.as_str().to_string(), r)))
    }

    /// Fusion at least as good as either single sensor.
    pub fn fusion_wins(&self) -> bool {
        let both = self.report(ChannelSet::Both).aggregate_rmse;
        both <= self.report(ChannelSet::Acc).aggregate_rmse && both <= self.report(ChannelSet::Gyro).aggregate_rmse
    }
}

/// Three arms differing only in the channel mask.
pub fn run_ablation(recordings: &[Recording], cfg: &ExperimentConfig) -> Result<AblationResult, PipelineError> {
    let mut reports = Vec::new();
    for channels in ABLATION_ARMS {
        let arm = ExperimentConfig { channels, ..cfg.clone() };
        let mut run = run_training(recordings, &arm)?;
        run.report.experiment = format!("ablation:{}", channels.as_str());
        reports.push(run.report);
    }
    Ok(AblationResult { reports })
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub reports: Vec<EvaluationReport>,
}

impl SweepResult {
    pub fn series(&self) -> Vec<(usize, f64)> {
        self.reports.iter().map(|r| (r.budget.unwrap_or(r.train_images), r.aggregate_rmse)).collect()
    }

    pub fn spearman(&self) -> f64 {
        let (m, r): (Vec<f64>, Vec<f64>) = self.series().into_iter().map(|(m, r)| (m as f64, r)).unzip();
        spearman(&m, &r)
    }

    pub fn table(&self) -> String {
        comparison_table(self.reports.iter().map(|r| (format!("m={}", budget_str(r.budget)), r)))
    }

    /// RMSE decrease per step of the series.
    pub fn improvements(&self) -> Vec<f64> {
        self.series().windows(2).map(|w| w[0].1 - w[1].1).collect()
    }
}

/// One run per budget on a shared split and seed.
pub fn run_m_sweep(
    recordings: &[Recording],
    budgets: &[usize],
    cfg: &ExperimentConfig,
) -> Result<SweepResult, PipelineError> {
    let split = prepare_split(recordings, cfg)?;
    if let Some(&max) = budgets.iter().max() {
        if max > split.train.len() {
            return Err(PipelineError::InsufficientImages { requested: max, available: split.train.len() });
        }
    }
    let mut reports = Vec::new();
    for &m in budgets {
        let point = ExperimentConfig { budget: Some(m), ..cfg.clone() };
        let mut run = train_on_split(&split, &point)?;
        run.report.experiment = "sweep".to_string();
        reports.push(run.report);
    }
    Ok(SweepResult { reports })
}

/// Ranks starting at 1, ties share their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation of the ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Counts pairs of improvements (earlier, later) where the later one is no
/// larger. Over three doublings this compares three pairs.
pub fn diminishing_pairs(improvements: &[f64]) -> (usize, usize) {
    let mut holds = 0;
    let mut total = 0;
    for i in 0..improvements.len() {
        for j in i + 1..improvements.len() {
            total += 1;
            if improvements[j] <= improvements[i] {
                holds += 1;
            }
        }
    }
    (holds, total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakageAudit {
    /// Evaluation windows whose time span intersects a training window of
    /// the same recording.
    pub overlapping_windows: usize,
    /// Max abs difference between the supplied normalizer and one refit on
    /// the training images.
    pub normalizer_deviation: f64,
}

/// Timestamp audit of a split plus a normalizer recomputation.
pub fn audit_split(split: &DatasetSplit, window_ns: i64, normalizer: &Normalizer) -> Result<LeakageAudit, PipelineError> {
    let mut spans: BTreeMap<&str, Vec<(i64, i64)>> = BTreeMap::new();
    for img in &split.train {
        spans.entry(img.recording.as_str()).or_default().push((img.start_ns, img.start_ns + window_ns));
    }
    let overlapping_windows = split
        .eval
        .iter()
        .filter(|e| {
            let (s, t) = (e.start_ns, e.start_ns + window_ns);
            spans.get(e.recording.as_str()).is_some_and(|v| v.iter().any(|&(a, b)| s < b && a < t))
        })
        .count();
    let refit = fit_normalizer(&split.train)?;
    let normalizer_deviation = refit
        .mean
        .iter()
        .zip(&normalizer.mean)
        .chain(refit.std.iter().zip(&normalizer.std))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(LeakageAudit { overlapping_windows, normalizer_deviation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_cohort, CohortSpec};
    use proptest::prelude::*;

    fn tiny_cohort() -> Vec<Recording> {
        let spec = CohortSpec { subjects: 2, speeds: vec![0.8, 1.3], minutes_per_speed: 0.5, ..CohortSpec::protocol(3) };
        generate_cohort(&spec).unwrap()
    }

    fn quick_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.train.epochs = 2;
        cfg.train.batch_size = 16;
        cfg
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn diminishing_pairs_counts() {
        assert_eq!(diminishing_pairs(&[0.3, 0.2, 0.1]), (3, 3));
        assert_eq!(diminishing_pairs(&[0.1, 0.2, 0.05]), (2, 3));
    }

    #[test]
    fn subsample_is_exact_and_seeded() {
        let split = prepare_split(&tiny_cohort(), &quick_config()).unwrap();
        let n = split.train.len();
        let a = subsample(split.train.clone(), Some(10), 1).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, subsample(split.train.clone(), Some(10), 1).unwrap());
        assert_ne!(a, subsample(split.train.clone(), Some(10), 2).unwrap());
        assert!(matches!(
            subsample(split.train, Some(n + 1), 1),
            Err(PipelineError::InsufficientImages { requested, available }) if requested == n + 1 && available == n
        ));
    }

    #[test]
    fn insufficient_images_from_run_training() {
        let cfg = ExperimentConfig { budget: Some(1_000_000), ..quick_config() };
        assert!(matches!(run_training(&tiny_cohort(), &cfg), Err(PipelineError::InsufficientImages { .. })));
    }

    #[test]
    fn report_round_trips_and_recomputes() {
        let run = run_training(&tiny_cohort(), &quick_config()).unwrap();
        let report = &run.report;
        assert_eq!(report.per_subject_rmse.len(), 2);
        let text = report.to_text();
        let back = EvaluationReport::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        let recomputed = rmse(back.windows.iter().map(|w| (w.true_mps, w.pred_mps)));
        assert!((recomputed - report.aggregate_rmse).abs() <= 1e-12);
        assert!(text.contains("aggregate_rmse_mps="));
    }

    #[test]
    fn training_is_deterministic() {
        let recs = tiny_cohort();
        let a = run_training(&recs, &quick_config()).unwrap();
        let b = run_training(&recs, &quick_config()).unwrap();
        assert_eq!(a.report.to_text(), b.report.to_text());
        assert_eq!(a.models[0].1.to_text(), b.models[0].1.to_text());
    }

    #[test]
    fn offline_and_online_predictions_agree() {
        let recs = tiny_cohort();
        let run = run_training(&recs, &quick_config()).unwrap();
        let model = SpeedModel::from_text(&run.models[0].1.to_text()).unwrap();
        for rec in &recs {
            let online: BTreeMap<i64, f64> = run_prediction(&model, rec).unwrap().into_iter().collect();
            for w in run.report.windows.iter().filter(|w| w.recording == rec.name) {
                let p = online[&w.start_ns];
                assert!((p - w.pred_mps).abs() <= 1e-9, "{} {} {}", rec.name, p, w.pred_mps);
            }
        }
    }

    #[test]
    fn prediction_window_counts() {
        let recs = tiny_cohort();
        let run = run_training(&recs, &quick_config()).unwrap();
        let model = &run.models[0].1;
        let mut rec = recs[0].clone();
        rec.samples.truncate(1000);
        assert_eq!(run_prediction(model, &rec).unwrap().len(), 5);
        rec.samples.truncate(190);
        assert!(matches!(
            run_prediction(model, &rec),
            Err(PipelineError::Imaging(ImagingError::WindowTooShort(190)))
        ));
    }

    #[test]
    fn per_subject_flag_trains_one_model_each() {
        let cfg = ExperimentConfig { per_subject: true, ..quick_config() };
        let run = run_training(&tiny_cohort(), &cfg).unwrap();
        let keys: Vec<&str> = run.models.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["S01", "S02"]);
        assert_eq!(run.report.per_subject_rmse.len(), 2);
    }

    #[test]
    fn ablation_arms_mask_and_share_seed() {
        let recs = tiny_cohort();
        let result = run_ablation(&recs, &quick_config()).unwrap();
        assert_eq!(result.reports.len(), 3);
        assert!(result.reports.iter().all(|r| r.seed == quick_config().train.seed));
        let table = result.table();
        assert!(table.starts_with("arm,rmse_mps\nacc,"), "{table}");
        for channels in [ChannelSet::Acc, ChannelSet::Gyro] {
            let cfg = ExperimentConfig { channels, ..quick_config() };
            let split = prepare_split(&recs, &cfg).unwrap();
            let mask = channels.mask();
            for img in split.train.iter().chain(&split.eval) {
                for (i, v) in img.pixels.iter().enumerate() {
                    if !mask[i % 4] {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
        }
        let again = run_ablation(&recs, &quick_config()).unwrap();
        assert_eq!(again.table(), table);
    }

    #[test]
    fn single_point_sweep_equals_training() {
        let recs = tiny_cohort();
        let cfg = ExperimentConfig { budget: Some(20), ..quick_config() };
        let sweep = run_m_sweep(&recs, &[20], &cfg).unwrap();
        let run = run_training(&recs, &cfg).unwrap();
        assert_eq!(sweep.series(), vec![(20, run.report.aggregate_rmse)]);
        assert_eq!(sweep.reports[0].windows, run.report.windows);
    }

    #[test]
    fn split_has_no_leakage() {
        let recs = tiny_cohort();
        let cfg = quick_config();
        let split = prepare_split(&recs, &cfg).unwrap();
        let run = train_on_split(&split, &cfg).unwrap();
        let audit = audit_split(&split, 2_000_000_000, &run.models[0].1.normalizer).unwrap();
        assert_eq!(audit.overlapping_windows, 0);
        assert_eq!(audit.normalizer_deviation, 0.0);
        let mut leaky = split.clone();
        leaky.eval.push(split.train[3].clone());
        assert_eq!(audit_split(&leaky, 2_000_000_000, &run.models[0].1.normalizer).unwrap().overlapping_windows, 1);
    }

    #[test]
    fn config_hash_tracks_settings() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { budget: Some(1000), ..a.clone() };
        assert_eq!(a.hash().len(), 16);
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }

    proptest! {
        #[test]
        fn report_rmse_is_recomputable(pairs in prop::collection::vec((0.3f64..1.5, 0.0f64..2.0), 1..40)) {
            let windows: Vec<WindowPrediction> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(t, p))| WindowPrediction {
                    subject_id: format!("S{:02}", i % 3),
                    recording: String::new(),
                    start_ns: i as i64,
                    true_mps: t,
                    pred_mps: p,
                })
                .collect();
            let mut report = EvaluationReport {
                experiment: "training".into(),
                channels: ChannelSet::Both,
                budget: None,
                train_images: 0,
                seed: 0,
                config_hash: "x".into(),
                diverged: false,
                per_subject_rmse: BTreeMap::new(),
                aggregate_rmse: 0.0,
                windows,
            };
            report.summarize();
            let back = EvaluationReport::from_text(&report.to_text()).unwrap();
            let r = rmse(back.windows.iter().map(|w| (w.true_mps, w.pred_mps)));
            prop_assert!((r - back.aggregate_rmse).abs() <= 1e-12);
            prop_assert_eq!(back.per_subject_rmse.len(), pairs.len().min(3));
        }
    }
}
