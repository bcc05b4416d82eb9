//! `gaitpipe` command-line entry point.

mod failure;

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gaitpipe::align::align_recording;
use gaitpipe::data::{load_session, parse_imu_reader, write_imu_csv, Recording, SessionManifest, DEFAULT_SAMPLE_RATE_HZ};
use gaitpipe::dsp::{
    design_lowpass, filter_recording, welch_psd, DEFAULT_CUTOFF_HZ, DEFAULT_NUM_TAPS, DEFAULT_PSD_OVERLAP,
    DEFAULT_PSD_WINDOW_SECONDS,
};
use gaitpipe::imaging::{fit_normalizer, ChannelSet, DatasetSplit, ImageStore, Preprocessor, DEFAULT_WINDOW_SECONDS};
use gaitpipe::model::SpeedModel;
use gaitpipe::nn::activation::DEFAULT_DROPOUT_RATE;
use gaitpipe::nn::train::{DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE};
use gaitpipe::nn::{LrSchedule, TrainConfig};
use gaitpipe::pipeline::{
    evaluation_report, prepare_split, run_ablation, run_m_sweep, run_prediction, train_on_split, ExperimentConfig,
    TrainingRun, DEFAULT_TRAIN_FRACTION, DEFAULT_TRAIN_OVERLAP, POOLED,
};
use gaitpipe::synth::{generate_cohort, write_cohort, CohortSpec, GaitParams, PROTOCOL_SPEEDS_MPH};

use failure::{Failure, EXIT_USAGE};

const TRAIN_STORE: &str = "train.images";
const EVAL_STORE: &str = "eval.images";

#[derive(Debug, Parser)]
#[command(name = "gaitpipe", version, about = "Walking-speed estimation from smartphone IMU data")]
struct Cli {
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = "GAITPIPE_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort: one IMU CSV per recording plus manifest.csv.
    Synth(SynthArgs),
    /// Welch power spectral density of every sensor axis.
    Psd(PsdArgs),
    /// Low-pass filter an IMU CSV.
    Filter(FilterArgs),
    /// Filter and align an IMU CSV into va, ha, vg, hg.
    Align(AlignArgs),
    /// Build train/eval image stores from a manifest.
    MakeImages(MakeImagesArgs),
    /// Train a model and evaluate it on the held-out split.
    Train(TrainArgs),
    /// Predict speed every window of an IMU CSV.
    Predict(PredictArgs),
    /// Evaluate a saved model on a held-out split.
    Evaluate(EvaluateArgs),
    /// ACC, GYRO and ACC+GYRO arms with shared seeds.
    Ablate(ExperimentArgs),
    /// One training run per image budget on a shared split.
    SweepM(SweepArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of subjects.
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    /// Treadmill speeds in mph.
    #[arg(long, value_delimiter = ',', default_values_t = PROTOCOL_SPEEDS_MPH.to_vec())]
    speeds_mph: Vec<f64>,
    /// Minutes per speed.
    #[arg(long, default_value_t = 5.0, value_parser = positive)]
    minutes: f64,
    /// Nominal sample rate, Hz.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ, value_parser = positive)]
    rate: f64,
    /// Accelerometer noise sigma, m/s².
    #[arg(long, default_value_t = GaitParams::default().accel_noise, value_parser = non_negative)]
    accel_noise: f64,
    /// Gyroscope noise sigma, rad/s.
    #[arg(long, default_value_t = GaitParams::default().gyro_noise, value_parser = non_negative)]
    gyro_noise: f64,
    /// Seed for every random stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory [default: <out-dir>/synth].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// IMU CSV (`t_ns,ax,ay,az,gx,gy,gz`); stdin when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Nominal sample rate, Hz.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ, value_parser = positive)]
    rate: f64,
}

#[derive(Debug, Args)]
struct PsdArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Hann segment length, seconds.
    #[arg(long, default_value_t = DEFAULT_PSD_WINDOW_SECONDS)]
    psd_window: f64,
    /// Segment overlap fraction.
    #[arg(long, default_value_t = DEFAULT_PSD_OVERLAP)]
    psd_overlap: f64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct PreprocessArgs {
    /// Low-pass cutoff, Hz.
    #[arg(long, default_value_t = DEFAULT_CUTOFF_HZ)]
    cutoff: f64,
    /// FIR tap count (odd).
    #[arg(long, default_value_t = DEFAULT_NUM_TAPS)]
    taps: usize,
    /// Gravity interval and prediction window, seconds.
    #[arg(long, default_value_t = DEFAULT_WINDOW_SECONDS, value_parser = positive)]
    window: f64,
}

impl PreprocessArgs {
    fn preprocessor(&self) -> Preprocessor {
        Preprocessor { cutoff_hz: self.cutoff, num_taps: self.taps, window_seconds: self.window }
    }
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    pre: PreprocessArgs,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    pre: PreprocessArgs,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct DatasetArgs {
    /// Session manifest CSV.
    #[arg(long)]
    manifest: PathBuf,
    /// Nominal sample rate, Hz.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ, value_parser = positive)]
    rate: f64,
    /// acc, gyro or both.
    #[arg(long, default_value = "both")]
    channels: ChannelSet,
    /// Fraction of each recording (in time) used for training.
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION, value_parser = open_fraction)]
    split: f64,
    /// Overlap between consecutive training windows.
    #[arg(long, default_value_t = DEFAULT_TRAIN_OVERLAP, value_parser = half_open_fraction)]
    overlap: f64,
    #[command(flatten)]
    pre: PreprocessArgs,
}

#[derive(Debug, Args)]
struct MakeImagesArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Output directory for train.images and eval.images [default: <out-dir>/images].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct TrainingArgs {
    /// Training epochs.
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    /// constant or cosine.
    #[arg(long, default_value = "constant")]
    schedule: LrSchedule,
    /// Dropout rate before the dense layer.
    #[arg(long, default_value_t = DEFAULT_DROPOUT_RATE, value_parser = half_open_fraction)]
    dropout: f64,
    /// Seed for every random stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainingArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            schedule: self.schedule,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Session manifest CSV (alternative to --images).
    #[arg(long, conflicts_with = "images", required_unless_present = "images")]
    manifest: Option<PathBuf>,
    /// Directory written by make-images.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Nominal sample rate, Hz.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ, value_parser = positive)]
    rate: f64,
    /// acc, gyro or both.
    #[arg(long, default_value = "both")]
    channels: ChannelSet,
    /// Fraction of each recording (in time) used for training.
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION, value_parser = open_fraction)]
    split: f64,
    /// Overlap between consecutive training windows.
    #[arg(long, default_value_t = DEFAULT_TRAIN_OVERLAP, value_parser = half_open_fraction)]
    overlap: f64,
    #[command(flatten)]
    pre: PreprocessArgs,
    #[command(flatten)]
    training: TrainingArgs,
    /// Training image budget M [default: all].
    #[arg(long)]
    m: Option<usize>,
    /// Train one model per subject.
    #[arg(long)]
    per_subject: bool,
    /// Model file [default: <out-dir>/model.txt].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluation report [default: <out-dir>/report.txt].
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model file written by train.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Model file written by train.
    #[arg(long)]
    model: PathBuf,
    /// Session manifest CSV (alternative to --images).
    #[arg(long, conflicts_with = "images", required_unless_present = "images")]
    manifest: Option<PathBuf>,
    /// Directory written by make-images.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Nominal sample rate, Hz.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ, value_parser = positive)]
    rate: f64,
    /// Fraction of each recording (in time) used for training.
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION, value_parser = open_fraction)]
    split: f64,
    /// Report file [default: <out-dir>/evaluation.txt].
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    training: TrainingArgs,
    /// Training image budget M [default: all].
    #[arg(long)]
    m: Option<usize>,
    /// Directory for reports and the comparison table [default: <out-dir>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    training: TrainingArgs,
    /// Image budgets.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1000usize, 2000, 4000, 8000])]
    m_values: Vec<usize>,
    /// Directory for reports and the comparison table [default: <out-dir>].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("`{s}` is not a non-negative number")),
    }
}

fn open_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("`{s}` is not in (0, 1)")),
    }
}

fn half_open_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..1.0).contains(&v) => Ok(v),
        _ => Err(format!("`{s}` is not in [0, 1)")),
    }
}

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            fs::write(p, text).map_err(|e| io_err(p, e))
        }
        None => io::stdout().write_all(text.as_bytes()).map_err(Failure::from),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn read_recording(input: &InputArgs) -> Result<Recording, Failure> {
    let (samples, name) = match &input.input {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
            let samples = parse_imu_reader(io::BufReader::new(file))
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (samples, stem)
        }
        None => {
            let mut buf = Vec::new();
            io::stdin().read_to_end(&mut buf)?;
            (parse_imu_reader(buf.as_slice())?, "stdin".to_string())
        }
    };
    Ok(Recording::new(name.clone(), name, None, input.rate, samples)?)
}

fn load_manifest(path: &Path, rate: f64) -> Result<Vec<Recording>, Failure> {
    let manifest = SessionManifest::read(path)?;
    Ok(load_session(&manifest, rate)?)
}

fn experiment_config(
    channels: ChannelSet,
    split: f64,
    overlap: f64,
    pre: &PreprocessArgs,
    training: &TrainingArgs,
    budget: Option<usize>,
) -> ExperimentConfig {
    ExperimentConfig {
        channels,
        budget,
        train: training.train_config(),
        preprocessor: pre.preprocessor(),
        train_fraction: split,
        train_overlap: overlap,
        per_subject: false,
        dropout: training.dropout,
    }
}

/// Checks settings that only the library can validate before any data is read.
fn validate(cfg: &ExperimentConfig, rate: f64) -> Result<(), Failure> {
    cfg.preprocessor.filter_for(rate)?;
    cfg.validate()?;
    Ok(())
}

fn read_stores(dir: &Path) -> Result<(ImageStore, ImageStore), Failure> {
    let train = ImageStore::read(&dir.join(TRAIN_STORE))?;
    let eval = ImageStore::read(&dir.join(EVAL_STORE))?;
    if train.channels != eval.channels {
        return Err(Failure::Data(format!("{}: train and eval stores use different channel sets", dir.display())));
    }
    Ok((train, eval))
}

fn run(cli: Cli) -> Result<(), Failure> {
    log::info!("config: {cli:?}");
    let out_dir = cli.out_dir;
    match cli.command {
        Command::Synth(a) => {
            let speeds = a
                .speeds_mph
                .iter()
                .map(|&mph| gaitpipe::data::mph_to_mps(mph))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Usage(format!("--speeds-mph: {e}")))?;
            let spec = CohortSpec {
                subjects: a.subjects,
                speeds,
                minutes_per_speed: a.minutes,
                sample_rate: a.rate,
                base: GaitParams { accel_noise: a.accel_noise, gyro_noise: a.gyro_noise, ..GaitParams::default() },
                seed: a.seed,
            };
            let dir = a.out.unwrap_or_else(|| out_dir.join("synth"));
            let recordings = generate_cohort(&spec)?;
            let manifest = write_cohort(&dir, &recordings)?;
            log::info!("wrote {} recordings and {}", manifest.entries.len(), dir.join("manifest.csv").display());
        }
        Command::Psd(a) => {
            let rec = read_recording(&a.input)?;
            let axes: [(&str, fn(&gaitpipe::data::ImuSample) -> f64); 6] = [
                ("ax", |s| s.accel[0]),
                ("ay", |s| s.accel[1]),
                ("az", |s| s.accel[2]),
                ("gx", |s| s.gyro[0]),
                ("gy", |s| s.gyro[1]),
                ("gz", |s| s.gyro[2]),
            ];
            let mut columns = Vec::new();
            for (_, get) in axes {
                let signal: Vec<f64> = rec.samples.iter().map(get).collect();
                columns.push(welch_psd(&signal, rec.sample_rate, a.psd_window, a.psd_overlap)?);
            }
            let mut text = String::from("freq_hz,ax,ay,az,gx,gy,gz\n");
            for (i, f) in columns[0].freqs.iter().enumerate() {
                let row: Vec<String> = columns.iter().map(|c| c.power[i].to_string()).collect();
                text.push_str(&format!("{f},{}\n", row.join(",")));
            }
            write_output(a.out.as_deref(), &text)?;
        }
        Command::Filter(a) => {
            let filter = design_lowpass(a.pre.cutoff, a.input.rate, a.pre.taps)?;
            let rec = read_recording(&a.input)?;
            let filtered = filter_recording(&filter, &rec)?;
            let mut buf = Vec::new();
            write_imu_csv(&mut buf, &filtered.samples)?;
            write_output(a.out.as_deref(), &String::from_utf8_lossy(&buf))?;
        }
        Command::Align(a) => {
            let filter = design_lowpass(a.pre.cutoff, a.input.rate, a.pre.taps)?;
            let rec = read_recording(&a.input)?;
            let filtered = filter_recording(&filter, &rec)?;
            let aligned =
                align_recording(&filtered, a.pre.window).map_err(|e| Failure::Data(format!("{}: {e}", rec.name)))?;
            write_output(a.out.as_deref(), &aligned.to_csv())?;
        }
        Command::MakeImages(a) => {
            let d = &a.data;
            let cfg = ExperimentConfig {
                channels: d.channels,
                preprocessor: d.pre.preprocessor(),
                train_fraction: d.split,
                train_overlap: d.overlap,
                ..ExperimentConfig::default()
            };
            validate(&cfg, d.rate)?;
            let recordings = load_manifest(&d.manifest, d.rate)?;
            let split = prepare_split(&recordings, &cfg)?;
            let normalizer = fit_normalizer(&split.train)?;
            let dir = a.out.unwrap_or_else(|| out_dir.join("images"));
            ensure_dir(&dir)?;
            for (name, images) in [(TRAIN_STORE, split.train), (EVAL_STORE, split.eval)] {
                let store = ImageStore { channels: d.channels, normalizer: Some(normalizer.clone()), images };
                store.write(&dir.join(name))?;
                log::info!("wrote {} images to {}", store.images.len(), dir.join(name).display());
            }
        }
        Command::Train(a) => {
            let (split, channels) = match (&a.manifest, &a.images) {
                (Some(manifest), _) => {
                    let cfg = experiment_config(a.channels, a.split, a.overlap, &a.pre, &a.training, a.m);
                    validate(&cfg, a.rate)?;
                    let recordings = load_manifest(manifest, a.rate)?;
                    (prepare_split(&recordings, &cfg)?, a.channels)
                }
                (None, Some(dir)) => {
                    let (train, eval) = read_stores(dir)?;
                    let channels = train.channels;
                    (DatasetSplit { train: train.images, eval: eval.images, split_fraction: a.split }, channels)
                }
                (None, None) => return Err(Failure::Usage("one of --manifest or --images is required".into())),
            };
            let mut cfg = experiment_config(channels, a.split, a.overlap, &a.pre, &a.training, a.m);
            cfg.per_subject = a.per_subject;
            validate(&cfg, a.rate)?;
            let run = train_on_split(&split, &cfg)?;
            let model_path = a.out.unwrap_or_else(|| out_dir.join("model.txt"));
            let report_path = a.report.unwrap_or_else(|| out_dir.join("report.txt"));
            write_models(&run, &model_path)?;
            run.report.write(&report_path)?;
            log::info!("aggregate RMSE {:.4} m/s, report {}", run.report.aggregate_rmse, report_path.display());
            if run.diverged() {
                return Err(Failure::Diverged(format!(
                    "training diverged; last finite checkpoint saved to {}",
                    model_path.display()
                )));
            }
        }
        Command::Predict(a) => {
            let model = SpeedModel::load(&a.model).map_err(|e| Failure::Data(format!("{}: {e}", a.model.display())))?;
            let rec = read_recording(&a.input)?;
            let preds = run_prediction(&model, &rec)?;
            let mut text = String::from("window_start_ns,speed_mps\n");
            for (start, speed) in preds {
                text.push_str(&format!("{start},{speed}\n"));
            }
            write_output(a.out.as_deref(), &text)?;
        }
        Command::Evaluate(a) => {
            let model = SpeedModel::load(&a.model).map_err(|e| Failure::Data(format!("{}: {e}", a.model.display())))?;
            let eval = match (&a.manifest, &a.images) {
                (Some(manifest), _) => {
                    let cfg = ExperimentConfig {
                        channels: model.channels,
                        preprocessor: model.preprocessor.clone(),
                        train_fraction: a.split,
                        ..ExperimentConfig::default()
                    };
                    let recordings = load_manifest(manifest, a.rate)?;
                    prepare_split(&recordings, &cfg)?.eval
                }
                (None, Some(dir)) => read_stores(dir)?.1.images,
                (None, None) => return Err(Failure::Usage("one of --manifest or --images is required".into())),
            };
            let report = evaluation_report("evaluation", &model, &eval, None)?;
            let path = a.report.unwrap_or_else(|| out_dir.join("evaluation.txt"));
            report.write(&path)?;
            println!("aggregate_rmse_mps={}", report.aggregate_rmse);
        }
        Command::Ablate(a) => {
            let d = &a.data;
            let cfg = experiment_config(d.channels, d.split, d.overlap, &d.pre, &a.training, a.m);
            validate(&cfg, d.rate)?;
            let recordings = load_manifest(&d.manifest, d.rate)?;
            let result = run_ablation(&recordings, &cfg)?;
            let dir = a.out.unwrap_or(out_dir);
            ensure_dir(&dir)?;
            for report in &result.reports {
                report.write(&dir.join(format!("ablation_{}.txt", report.channels.as_str())))?;
            }
            let table = result.table();
            write_output(Some(&dir.join("ablation.csv")), &table)?;
            print!("{table}");
            diverged_any(result.reports.iter().map(|r| r.diverged))?;
        }
        Command::SweepM(a) => {
            let d = &a.data;
            let cfg = experiment_config(d.channels, d.split, d.overlap, &d.pre, &a.training, None);
            validate(&cfg, d.rate)?;
            if a.m_values.is_empty() || a.m_values.contains(&0) {
                return Err(Failure::Usage("--m-values: budgets must be positive".into()));
            }
            let recordings = load_manifest(&d.manifest, d.rate)?;
            let result = run_m_sweep(&recordings, &a.m_values, &cfg)?;
            let dir = a.out.unwrap_or(out_dir);
            ensure_dir(&dir)?;
            for report in &result.reports {
                let m = report.budget.expect("sweep points carry a budget");
                report.write(&dir.join(format!("sweep_m{m}.txt")))?;
            }
            let table = result.table();
            write_output(Some(&dir.join("sweep.csv")), &table)?;
            print!("{table}");
            println!("spearman={}", result.spearman());
            diverged_any(result.reports.iter().map(|r| r.diverged))?;
        }
    }
    Ok(())
}

fn diverged_any(mut flags: impl Iterator<Item = bool>) -> Result<(), Failure> {
    if flags.any(|d| d) {
        Err(Failure::Diverged("at least one run diverged; see the flagged reports".into()))
    } else {
        Ok(())
    }
}

/// The pooled model goes to `path`; per-subject models to `path.<subject>`.
fn write_models(run: &TrainingRun, path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    for (key, model) in &run.models {
        let target = if key == POOLED {
            path.to_path_buf()
        } else {
            let mut name = path.as_os_str().to_owned();
            name.push(format!(".{key}"));
            PathBuf::from(name)
        };
        model.save(&target).map_err(|e| Failure::Data(format!("{}: {e}", target.display())))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
