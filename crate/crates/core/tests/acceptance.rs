//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Lines are written straight to stderr so they appear without `--nocapture`.
//! Run with `cargo test -p gaitpipe --test acceptance`.

use std::io::Write as _;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use gaitpipe::data::Recording;
use gaitpipe::dsp::{design_lowpass, welch_psd};
use gaitpipe::imaging::{ChannelSet, Preprocessor};
use gaitpipe::model::SpeedModel;
use gaitpipe::nn::activation::{Dropout, Relu};
use gaitpipe::nn::batchnorm::BatchNorm;
use gaitpipe::nn::conv::Conv2d;
use gaitpipe::nn::dense::Dense;
use gaitpipe::nn::gradcheck::{check_layer, check_network, random_tensor, DEFAULT_STEP};
use gaitpipe::nn::network::Layer;
use gaitpipe::nn::pool::MaxPool;
use gaitpipe::nn::{LrSchedule, Mode, Network, TrainConfig};
use gaitpipe::pipeline::{
    audit_split, diminishing_pairs, prepare_split, run_ablation, run_m_sweep, run_training, train_on_split,
    ExperimentConfig,
};
use gaitpipe::synth::{
    generate_cohort, generate_recording, protocol_speeds, random_rotation, rotate_recording, CohortSpec, GaitParams,
    Orientation,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const COHORT_SEED: u64 = 1;
const WINDOW_NS: i64 = 2_000_000_000;

/// Criteria run one at a time so wall-clock budgets are not shared.
static EXCLUSIVE: Mutex<()> = Mutex::new(());

fn exclusive() -> MutexGuard<'static, ()> {
    EXCLUSIVE.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {id} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

/// Ten subjects, five speeds, five minutes each at 100 Hz.
fn protocol_cohort() -> Vec<Recording> {
    generate_cohort(&CohortSpec::protocol(COHORT_SEED)).unwrap()
}

/// Three subjects, the slowest/middle/fastest protocol speeds, two minutes each.
fn reduced_cohort() -> Vec<Recording> {
    let speeds = protocol_speeds();
    let spec = CohortSpec {
        subjects: 3,
        speeds: vec![speeds[0], speeds[2], speeds[4]],
        minutes_per_speed: 2.0,
        ..CohortSpec::protocol(COHORT_SEED)
    };
    generate_cohort(&spec).unwrap()
}

/// Short cosine-decayed training used by the experiment surrogates.
fn experiment_config(epochs: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        train: TrainConfig { epochs, schedule: LrSchedule::Cosine, seed, ..TrainConfig::default() },
        ..ExperimentConfig::default()
    }
}

#[test]
fn criterion_1_gradient_suite() {
    let _serial = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut conv = Conv2d::new(2, 3);
    conv.init(&mut rng);
    let mut bn = BatchNorm::new(3);
    bn.gamma = vec![0.5, 1.5, -0.7];
    bn.beta = vec![0.1, -0.2, 0.3];
    bn.running_mean = vec![0.2, -0.1, 0.0];
    bn.running_var = vec![0.5, 2.0, 1.0];
    let mut dense = Dense::new(24, 1);
    dense.init(&mut rng);
    let cases: Vec<(&str, Layer, [usize; 4], Mode, f64)> = vec![
        ("conv", Layer::Conv(conv), [2, 6, 4, 2], Mode::Train, 0.0),
        ("batchnorm/train", Layer::BatchNorm(bn.clone()), [3, 4, 2, 3], Mode::Train, 0.0),
        ("batchnorm/infer", Layer::BatchNorm(bn), [3, 4, 2, 3], Mode::Infer, 0.0),
        ("relu", Layer::Relu(Relu::new()), [2, 5, 3, 2], Mode::Train, 0.01),
        ("maxpool", Layer::MaxPool(MaxPool::new()), [2, 5, 3, 2], Mode::Train, 0.0),
        ("dropout-off", Layer::Dropout(Dropout::new(0.2, 3).unwrap()), [2, 4, 3, 2], Mode::Infer, 0.0),
        ("fc", Layer::Dense(dense), [3, 4, 3, 2], Mode::Train, 0.0),
    ];
    let mut worst = Vec::new();
    let mut pass = true;
    for (i, (name, layer, shape, mode, margin)) in cases.into_iter().enumerate() {
        let x = random_tensor(shape, margin, 10 + i as u64);
        let r = check_layer(&layer, &x, mode, DEFAULT_STEP, 20 + i as u64).unwrap();
        pass &= r.passes(1e-3);
        worst.push(format!("{name} {:.1e}", r.max_rel_error));
    }
    let x = random_tensor([3, 45, 4, 1], 0.0, 5);
    let net = check_network(&Network::speed_cnn(4), &x, &[0.5, 1.0, 1.5], 8, DEFAULT_STEP, 6).unwrap();
    pass &= net.passes(1e-2) && net.straddled_fraction() < 0.25;
    worst.push(format!(
        "network {:.1e} ({} probes, {} straddling a kink)",
        net.max_rel_error, net.checked, net.straddled
    ));
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    verdict(1, "gradient suite", pass, &format!("{} in {}", worst.join(", "), secs(elapsed)));
}

#[test]
fn criterion_2_rotation_invariance() {
    let _serial = exclusive();
    let start = Instant::now();
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let params = GaitParams { orientation: Orientation::Fixed(identity), ..GaitParams::with_speed(1.1).noiseless() };
    let base = generate_recording(&params, 20.0, 100.0, 9, "S01", "r").unwrap();
    let pre = Preprocessor::default();
    let reference = pre.align(&base).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut max_diff: f64 = 0.0;
    for _ in 0..100 {
        let rotated = rotate_recording(&base, &random_rotation(&mut rng));
        let aligned = pre.align(&rotated).unwrap();
        for (a, b) in aligned.rows.iter().zip(&reference.rows) {
            for (x, y) in a.values().iter().zip(b.values()) {
                max_diff = max_diff.max((x - y).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = max_diff < 1e-9 && elapsed < Duration::from_secs(60);
    verdict(2, "rotation invariance", pass, &format!("max |diff| {max_diff:.2e} over 100 rotations in {}", secs(elapsed)));
}

#[test]
fn criterion_3_filter_spec() {
    let _serial = exclusive();
    let start = Instant::now();
    let filter = design_lowpass(15.0, 100.0, 65).unwrap();
    let (g5, g30, g0) = (filter.gain_at(5.0), filter.gain_at(30.0), filter.gain_at(0.0));
    let sine: Vec<f64> = (0..1000).map(|i| (std::f64::consts::TAU * 10.0 * i as f64 / 100.0).sin()).collect();
    let psd = welch_psd(&sine, 100.0, 1.0, 0.5).unwrap();
    let peak = psd.peak_frequency();
    let elapsed = start.elapsed();
    let pass = g5 >= 0.99 && g30 <= 0.05 && (g0 - 1.0).abs() <= 1e-6 && peak == 10.0 && elapsed < Duration::from_secs(10);
    verdict(
        3,
        "filter spec",
        pass,
        &format!("gain 5 Hz {g5:.5}, 30 Hz {g30:.2e}, DC {g0:.9}; PSD peak {peak} Hz in {}", secs(elapsed)),
    );
}

#[test]
fn criterion_4_shape_chain() {
    let _serial = exclusive();
    let net = Network::speed_cnn(0);
    let chain = net.shape_chain().unwrap();
    let after_pool: Vec<[usize; 4]> =
        chain.iter().filter(|(name, _)| name.starts_with("maxpool")).map(|(_, s)| *s).collect();
    let convs: Vec<&str> = chain.iter().filter(|(n, _)| n.starts_with("conv")).map(|(n, _)| n.as_str()).collect();
    let last_conv_block = chain.iter().rev().find(|(n, _)| n.starts_with("relu")).map(|(_, s)| *s);
    let fc = chain.last().map(|(n, _)| n.as_str());
    let pass = after_pool == [[1, 44, 3, 16], [1, 43, 2, 32], [1, 42, 1, 48]]
        && last_conv_block == Some([1, 42, 1, 64])
        && convs == ["conv2x2(1->16)", "conv2x2(16->32)", "conv2x2(32->48)", "conv2x2(48->64)"]
        && fc == Some("fc(2688->1)");
    let shapes: Vec<String> = std::iter::once("45x4x1".to_string())
        .chain(after_pool.iter().chain(last_conv_block.iter()).map(|s| format!("{}x{}x{}", s[1], s[2], s[3])))
        .collect();
    verdict(4, "architecture shape chain", pass, &format!("{} -> {}", shapes.join(" -> "), fc.unwrap_or("?")));
}

#[test]
fn criterion_5_end_to_end() {
    let _serial = exclusive();
    let start = Instant::now();
    let reduced = run_training(&reduced_cohort(), &experiment_config(30, 0)).unwrap();
    let reduced_time = start.elapsed();
    let reduced_ok = reduced.report.aggregate_rmse <= 0.25 && !reduced.diverged() && reduced_time < Duration::from_secs(300);

    let start = Instant::now();
    let full = run_training(&protocol_cohort(), &experiment_config(8, 0)).unwrap();
    let full_time = start.elapsed();
    let report = &full.report;
    let full_ok = report.aggregate_rmse <= 0.20
        && report.subject_spread() <= 0.10
        && report.per_subject_rmse.len() == 10
        && !full.diverged()
        && full_time < Duration::from_secs(1800);
    verdict(
        5,
        "end-to-end surrogate",
        reduced_ok && full_ok,
        &format!(
            "protocol cohort RMSE {:.4} m/s, subject spread {:.4} m/s ({}); reduced preset RMSE {:.4} m/s ({})",
            report.aggregate_rmse,
            report.subject_spread(),
            secs(full_time),
            reduced.report.aggregate_rmse,
            secs(reduced_time)
        ),
    );
}

#[test]
fn criterion_6_ablation() {
    let _serial = exclusive();
    let recordings = protocol_cohort();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5 {
        let result = run_ablation(&recordings, &experiment_config(8, seed)).unwrap();
        let r = |c| result.report(c).aggregate_rmse;
        if result.fusion_wins() {
            wins += 1;
        }
        rows.push(format!("seed {seed}: acc {:.4} gyro {:.4} both {:.4}", r(ChannelSet::Acc), r(ChannelSet::Gyro), r(ChannelSet::Both)));
    }
    verdict(6, "sensor ablation", wins >= 4, &format!("fusion best on {wins}/5 seeds; {}", rows.join("; ")));
}

#[test]
fn criterion_7_m_sweep() {
    let _serial = exclusive();
    let sweep = run_m_sweep(&protocol_cohort(), &[1000, 2000, 4000, 8000], &experiment_config(8, 0)).unwrap();
    let series = sweep.series();
    let rho = sweep.spearman();
    let (holds, total) = diminishing_pairs(&sweep.improvements());
    let pass = rho <= -0.8 && series[3].1 < series[0].1 && holds >= 2;
    let points: Vec<String> = series.iter().map(|(m, r)| format!("M={m} {r:.4}")).collect();
    verdict(
        7,
        "image-count sweep",
        pass,
        &format!("{}; spearman {rho:.2}; diminishing returns {holds}/{total}", points.join(", ")),
    );
}

#[test]
fn criterion_8_determinism() {
    let _serial = exclusive();
    let recordings = reduced_cohort();
    let cfg = experiment_config(3, 7);
    let a = run_training(&recordings, &cfg).unwrap();
    let b = run_training(&recordings, &cfg).unwrap();
    let model_a = a.models[0].1.to_text();
    let same_model = model_a == b.models[0].1.to_text();
    let same_report = a.report.to_text() == b.report.to_text();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    a.models[0].1.save(&path).unwrap();
    let loaded = SpeedModel::load(&path).unwrap();
    let split = prepare_split(&recordings, &cfg).unwrap();
    let before = a.models[0].1.predict(&split.eval).unwrap();
    let after = loaded.predict(&split.eval).unwrap();
    let max_diff = before.iter().zip(&after).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let file_same = std::fs::read_to_string(&path).unwrap() == model_a;
    verdict(
        8,
        "determinism and serialization",
        same_model && same_report && file_same && max_diff <= 1e-9,
        &format!(
            "identical models {same_model}, identical reports {same_report}, round-trip max |diff| {max_diff:.1e} over {} predictions",
            before.len()
        ),
    );
}

#[test]
fn criterion_9_leakage_audit() {
    let _serial = exclusive();
    let recordings = reduced_cohort();
    let cfg = experiment_config(1, 0);
    let split = prepare_split(&recordings, &cfg).unwrap();
    let run = train_on_split(&split, &cfg).unwrap();
    let audit = audit_split(&split, WINDOW_NS, &run.models[0].1.normalizer).unwrap();
    let pass = audit.overlapping_windows == 0 && audit.normalizer_deviation == 0.0;
    verdict(
        9,
        "leakage audit",
        pass,
        &format!(
            "{} eval windows vs {} train windows: {} overlapping; normalizer refit deviation {:.1e}",
            split.eval.len(),
            split.train.len(),
            audit.overlapping_windows,
            audit.normalizer_deviation
        ),
    );
}
