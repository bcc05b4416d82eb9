//! Gait images: fixed 45×4 summaries of 2 s aligned windows, dataset
//! construction, per-recording time splits and input normalization.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::align::{align_recording, interval_len, AlignError, AlignedRow, AlignedSeries};
use crate::data::Recording;
use crate::dsp::{design_lowpass, filter_recording, DspError, FirFilter, DEFAULT_CUTOFF_HZ, DEFAULT_NUM_TAPS};

pub const IMAGE_ROWS: usize = 45;
pub const IMAGE_COLS: usize = 4;
pub const IMAGE_LEN: usize = IMAGE_ROWS * IMAGE_COLS;
pub const DEFAULT_WINDOW_SECONDS: f64 = 2.0;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const DEFAULT_TRAIN_OVERLAP: f64 = 0.5;

const STORE_MAGIC: &str = "gaitpipe-images v1";

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("window has {0} rows, need at least {IMAGE_ROWS}")]
    WindowTooShort(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("column {0} is constant over the training set")]
    ConstantColumn(usize),
    #[error("recording {recording} yields {count} images, need at least 2 to split")]
    TooFewImages { recording: String, count: usize },
    #[error("invalid overlap fraction {0}")]
    InvalidOverlap(f64),
    #[error("unknown channel set `{0}` (expected acc, gyro or both)")]
    UnknownChannelSet(String),
    #[error("recording {recording}: {source}")]
    Align {
        recording: String,
        #[source]
        source: AlignError,
    },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("image store {}: {reason}", path.display())]
    BadStore { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Which sensor channels are kept; excluded columns are zero-filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelSet {
    Acc,
    Gyro,
    Both,
}

impl ChannelSet {
    pub const ALL: [ChannelSet; 3] = [ChannelSet::Acc, ChannelSet::Gyro, ChannelSet::Both];

    /// Columns kept, in (va, ha, vg, hg) order.
    pub fn mask(self) -> [bool; IMAGE_COLS] {
        match self {
            ChannelSet::Acc => [true, true, false, false],
            ChannelSet::Gyro => [false, false, true, true],
            ChannelSet::Both => [true; 4],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelSet::Acc => "acc",
            ChannelSet::Gyro => "gyro",
            ChannelSet::Both => "both",
        }
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelSet {
    type Err = ImagingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "acc" => Ok(ChannelSet::Acc),
            "gyro" => Ok(ChannelSet::Gyro),
            "both" | "acc+gyro" => Ok(ChannelSet::Both),
            _ => Err(ImagingError::UnknownChannelSet(s.to_string())),
        }
    }
}

/// 45 rows × 4 columns (va, ha, vg, hg), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitImage {
    pub pixels: [f64; IMAGE_LEN],
    /// Speed in m/s, `None` for prediction-only input.
    pub label: Option<f64>,
    pub subject_id: String,
    pub recording: String,
    /// Timestamp of the first sample of the source window.
    pub start_ns: i64,
}

impl GaitImage {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMAGE_COLS + col]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        (0..IMAGE_ROWS).map(move |r| self.get(r, col))
    }

    pub fn apply_mask(&mut self, channels: ChannelSet) {
        let mask = channels.mask();
        for row in self.pixels.chunks_exact_mut(IMAGE_COLS) {
            for (v, keep) in row.iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Resamples `rows` to exactly 45 rows. Each output row is the average over an
/// equal-duration time bin, where sample `i` holds its value over `[i, i+1)`
/// and samples straddling a bin boundary contribute in proportion to overlap.
pub fn resample_rows(rows: &[[f64; IMAGE_COLS]]) -> Result<[f64; IMAGE_LEN], ImagingError> {
    let n = rows.len();
    if n < IMAGE_ROWS {
        return Err(ImagingError::WindowTooShort(n));
    }
    let mut out = [0.0; IMAGE_LEN];
    // Positions are measured in units of 1/45 sample so bin edges are integers.
    for (k, dst) in out.chunks_exact_mut(IMAGE_COLS).enumerate() {
        let lo = k * n;
        let hi = (k + 1) * n;
        let first = lo / IMAGE_ROWS;
        let last = (hi - 1) / IMAGE_ROWS;
        for (i, row) in rows.iter().enumerate().take(last + 1).skip(first) {
            let s_lo = (i * IMAGE_ROWS).max(lo);
            let s_hi = ((i + 1) * IMAGE_ROWS).min(hi);
            let w = (s_hi - s_lo) as f64 / n as f64;
            for (d, v) in dst.iter_mut().zip(row) {
                *d += w * v;
            }
        }
    }
    Ok(out)
}

pub fn window_to_image(
    window: &[AlignedRow],
    label: Option<f64>,
    subject_id: &str,
    recording: &str,
) -> Result<GaitImage, ImagingError> {
    let values: Vec<[f64; 4]> = window.iter().map(AlignedRow::values).collect();
    let pixels = resample_rows(&values)?;
    Ok(GaitImage {
        pixels,
        label,
        subject_id: subject_id.to_string(),
        recording: recording.to_string(),
        start_ns: window.first().map(|r| r.t_ns).unwrap_or_default(),
    })
}

/// Filtering and alignment settings shared by the training and prediction paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub cutoff_hz: f64,
    pub num_taps: usize,
    pub window_seconds: f64,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor { cutoff_hz: DEFAULT_CUTOFF_HZ, num_taps: DEFAULT_NUM_TAPS, window_seconds: DEFAULT_WINDOW_SECONDS }
    }
}

impl Preprocessor {
    pub fn filter_for(&self, sample_rate: f64) -> Result<FirFilter, DspError> {
        design_lowpass(self.cutoff_hz, sample_rate, self.num_taps)
    }

    /// Filter then align; gravity intervals coincide with the prediction windows.
    pub fn align(&self, rec: &Recording) -> Result<AlignedSeries, ImagingError> {
        let filter = self.filter_for(rec.sample_rate)?;
        let filtered = filter_recording(&filter, rec)?;
        align_recording(&filtered, self.window_seconds)
            .map_err(|source| ImagingError::Align { recording: rec.name.clone(), source })
    }

    pub fn window_len(&self, sample_rate: f64) -> usize {
        interval_len(sample_rate, self.window_seconds)
    }
}

fn stride_for(window_len: usize, overlap: f64) -> Result<usize, ImagingError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(ImagingError::InvalidOverlap(overlap));
    }
    Ok((((1.0 - overlap) * window_len as f64).round() as usize).max(1))
}

/// Cuts windows of `window_len` rows from `rows[range]` with the given stride.
fn cut_windows(
    aligned: &AlignedSeries,
    rec: &Recording,
    range: std::ops::Range<usize>,
    window_len: usize,
    stride: usize,
    channels: ChannelSet,
) -> Result<Vec<GaitImage>, ImagingError> {
    let mut images = Vec::new();
    let mut start = range.start;
    while start + window_len <= range.end {
        let mut img =
            window_to_image(&aligned.rows[start..start + window_len], rec.true_speed, &rec.subject_id, &rec.name)?;
        img.apply_mask(channels);
        images.push(img);
        start += stride;
    }
    Ok(images)
}

/// Filters, aligns and windows every recording. `overlap` is the fraction of a
/// window shared with the next one.
pub fn build_dataset(
    recordings: &[Recording],
    channels: ChannelSet,
    overlap: f64,
    pre: &Preprocessor,
) -> Result<Vec<GaitImage>, ImagingError> {
    let mut images = Vec::new();
    for rec in recordings {
        images.extend(recording_images(rec, channels, overlap, pre)?);
    }
    if images.is_empty() {
        return Err(ImagingError::EmptyDataset);
    }
    Ok(images)
}

pub fn recording_images(
    rec: &Recording,
    channels: ChannelSet,
    overlap: f64,
    pre: &Preprocessor,
) -> Result<Vec<GaitImage>, ImagingError> {
    let window_len = pre.window_len(rec.sample_rate);
    let stride = stride_for(window_len, overlap)?;
    let aligned = pre.align(rec)?;
    cut_windows(&aligned, rec, 0..aligned.len(), window_len, stride, channels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<GaitImage>,
    pub eval: Vec<GaitImage>,
    pub split_fraction: f64,
}

/// Number of leading windows assigned to training out of `count`.
/// Always leaves at least one window for evaluation.
pub fn train_count(count: usize, fraction: f64) -> usize {
    let raw = (fraction * count as f64 - 1e-9).ceil().max(0.0) as usize;
    raw.min(count.saturating_sub(1))
}

/// Per recording, the first `ceil(fraction × count)` images in time order go to
/// training and the rest to evaluation.
pub fn split_by_time(per_recording: Vec<Vec<GaitImage>>, fraction: f64) -> Result<DatasetSplit, ImagingError> {
    let mut split = DatasetSplit { train: Vec::new(), eval: Vec::new(), split_fraction: fraction };
    for mut images in per_recording {
        if images.len() < 2 {
            let recording = images.first().map(|i| i.recording.clone()).unwrap_or_default();
            return Err(ImagingError::TooFewImages { recording, count: images.len() });
        }
        images.sort_by_key(|i| i.start_ns);
        let n_train = train_count(images.len(), fraction);
        let eval = images.split_off(n_train);
        split.train.extend(images);
        split.eval.extend(eval);
    }
    Ok(split)
}

/// Builds a time split where training windows may overlap (augmentation) but
/// never cross the split point, and evaluation windows are disjoint and start at
/// the split point.
pub fn build_split(
    recordings: &[Recording],
    channels: ChannelSet,
    train_overlap: f64,
    fraction: f64,
    pre: &Preprocessor,
) -> Result<DatasetSplit, ImagingError> {
    let mut split = DatasetSplit { train: Vec::new(), eval: Vec::new(), split_fraction: fraction };
    for rec in recordings {
        let window_len = pre.window_len(rec.sample_rate);
        let stride = stride_for(window_len, train_overlap)?;
        let aligned = pre.align(rec)?;
        let count = aligned.len() / window_len;
        if count < 2 {
            return Err(ImagingError::TooFewImages { recording: rec.name.clone(), count });
        }
        let boundary = train_count(count, fraction) * window_len;
        split.train.extend(cut_windows(&aligned, rec, 0..boundary, window_len, stride, channels)?);
        split.eval.extend(cut_windows(&aligned, rec, boundary..aligned.len(), window_len, window_len, channels)?);
    }
    if split.train.is_empty() {
        return Err(ImagingError::EmptyDataset);
    }
    Ok(split)
}

/// Per-column z-score statistics fit on training images.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; IMAGE_COLS],
    pub std: [f64; IMAGE_COLS],
    /// Columns that were all-zero in training (masked) are passed through.
    pub active: [bool; IMAGE_COLS],
}

impl Normalizer {
    pub fn identity() -> Self {
        Normalizer { mean: [0.0; 4], std: [1.0; 4], active: [false; 4] }
    }

    pub fn apply(&self, image: &GaitImage) -> GaitImage {
        let mut out = image.clone();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place(&self, image: &mut GaitImage) {
        for row in image.pixels.chunks_exact_mut(IMAGE_COLS) {
            for c in 0..IMAGE_COLS {
                if self.active[c] {
                    row[c] = (row[c] - self.mean[c]) / self.std[c];
                }
            }
        }
    }

    pub fn encode(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",");
        let active: Vec<&str> = self.active.iter().map(|a| if *a { "1" } else { "0" }).collect();
        format!("{};{};{}", join(&self.mean), join(&self.std), active.join(","))
    }

    pub fn decode(s: &str) -> Option<Self> {
        let parts: Vec<&str> = s.split(';').collect();
        if parts.len() != 3 {
            return None;
        }
        let floats = |p: &str| -> Option<[f64; 4]> {
            let v: Vec<f64> = p.split(',').map(|x| x.trim().parse().ok()).collect::<Option<_>>()?;
            v.try_into().ok()
        };
        let active: Vec<bool> = parts[2]
            .split(',')
            .map(|x| match x.trim() {
                "1" => Some(true),
                "0" => Some(false),
                _ => None,
            })
            .collect::<Option<_>>()?;
        Some(Normalizer { mean: floats(parts[0])?, std: floats(parts[1])?, active: active.try_into().ok()? })
    }
}

/// Population mean and standard deviation per column over every row of every
/// training image.
pub fn fit_normalizer(train: &[GaitImage]) -> Result<Normalizer, ImagingError> {
    if train.is_empty() {
        return Err(ImagingError::EmptyDataset);
    }
    let count = (train.len() * IMAGE_ROWS) as f64;
    let mut norm = Normalizer { mean: [0.0; 4], std: [1.0; 4], active: [false; 4] };
    for c in 0..IMAGE_COLS {
        let all_zero = train.iter().all(|img| img.column(c).all(|v| v == 0.0));
        if all_zero {
            continue;
        }
        let mean = train.iter().flat_map(|img| img.column(c)).sum::<f64>() / count;
        let var = train.iter().flat_map(|img| img.column(c)).map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        let std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            return Err(ImagingError::ConstantColumn(c));
        }
        norm.mean[c] = mean;
        norm.std[c] = std;
        norm.active[c] = true;
    }
    Ok(norm)
}

pub fn apply_normalizer(n: &Normalizer, image: &GaitImage) -> GaitImage {
    n.apply(image)
}

/// Contents of an image store file.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStore {
    pub channels: ChannelSet,
    pub normalizer: Option<Normalizer>,
    pub images: Vec<GaitImage>,
}

impl ImageStore {
    pub fn write(&self, path: &Path) -> Result<(), ImagingError> {
        let mut out = String::new();
        out.push_str(STORE_MAGIC);
        out.push('\n');
        out.push_str(&format!("count={}\nrows={IMAGE_ROWS}\ncols={IMAGE_COLS}\nchannels={}\n", self.images.len(), self.channels));
        match &self.normalizer {
            Some(n) => out.push_str(&format!("normalizer={}\n", n.encode())),
            None => out.push_str("normalizer=none\n"),
        }
        for img in &self.images {
            let label = img.label.map(|l| format!("{l:.16e}")).unwrap_or_else(|| "none".to_string());
            out.push_str(&format!("{},{},{},{}", img.subject_id, img.recording, label, img.start_ns));
            for v in img.pixels {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|source| ImagingError::Io { path: path.to_path_buf(), source })
    }

    pub fn read(path: &Path) -> Result<Self, ImagingError> {
        let text = fs::read_to_string(path).map_err(|source| ImagingError::Io { path: path.to_path_buf(), source })?;
        let bad = |reason: String| ImagingError::BadStore { path: path.to_path_buf(), reason };
        let mut lines = text.lines();
        if lines.next() != Some(STORE_MAGIC) {
            return Err(bad("missing magic line".into()));
        }
        let mut header = |key: &str| -> Result<String, ImagingError> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{key}`")))?;
            line.strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{key}=`, got `{line}`")))
        };
        let count: usize = header("count")?.parse().map_err(|_| bad("bad count".into()))?;
        if header("rows")? != IMAGE_ROWS.to_string() || header("cols")? != IMAGE_COLS.to_string() {
            return Err(bad("image shape must be 45x4".into()));
        }
        let channels: ChannelSet = header("channels")?.parse()?;
        let normalizer = match header("normalizer")?.as_str() {
            "none" => None,
            s => Some(Normalizer::decode(s).ok_or_else(|| bad("bad normalizer".into()))?),
        };
        let mut images = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 + IMAGE_LEN {
                return Err(bad(format!("image {i}: expected {} fields, got {}", 4 + IMAGE_LEN, fields.len())));
            }
            let label = match fields[2] {
                "none" => None,
                s => Some(s.parse().map_err(|_| bad(format!("image {i}: bad label")))?),
            };
            let start_ns = fields[3].parse().map_err(|_| bad(format!("image {i}: bad start")))?;
            let mut pixels = [0.0; IMAGE_LEN];
            for (p, f) in pixels.iter_mut().zip(&fields[4..]) {
                *p = f.parse().map_err(|_| bad(format!("image {i}: bad pixel `{f}`")))?;
            }
            images.push(GaitImage {
                pixels,
                label,
                subject_id: fields[0].to_string(),
                recording: fields[1].to_string(),
                start_ns,
            });
        }
        if images.len() != count {
            return Err(bad(format!("header says {count} images, found {}", images.len())));
        }
        Ok(ImageStore { channels, normalizer, images })
    }
}
