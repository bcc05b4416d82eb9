//! Orientation-independent decomposition of device-frame motion.
//!
//! Gravity is estimated as the mean acceleration over consecutive fixed-length
//! intervals. Within each interval every sample is split into the component
//! along that gravity direction and the orthogonal remainder; only the
//! magnitudes are kept, which makes the output invariant to how the phone is
//! oriented.

use thiserror::Error;

use crate::data::Recording;

pub const DEFAULT_GRAVITY_INTERVAL_SECONDS: f64 = 2.0;
pub const MIN_GRAVITY_NORM: f64 = 1e-6;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("gravity interval {interval} has no samples")]
    EmptyWindow { interval: usize },
    #[error("gravity estimate in interval {interval} has norm {norm:e} (free fall?)")]
    DegenerateGravity { interval: usize, norm: f64 },
    #[error("recording has {len} samples, shorter than one {needed}-sample gravity interval")]
    RecordingTooShort { len: usize, needed: usize },
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Mean device-frame acceleration over one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityEstimate {
    v: Vec3,
}

impl GravityEstimate {
    pub fn new(v: Vec3) -> Result<Self, AlignError> {
        let n = norm(v);
        if !(n > MIN_GRAVITY_NORM) {
            return Err(AlignError::DegenerateGravity { interval: 0, norm: n });
        }
        Ok(GravityEstimate { v })
    }

    pub fn vector(&self) -> Vec3 {
        self.v
    }

    /// Splits `d` into its projection on the gravity axis and the orthogonal
    /// remainder, returning both vectors.
    pub fn project(&self, d: Vec3) -> (Vec3, Vec3) {
        let p = scale(self.v, dot(d, self.v) / dot(self.v, self.v));
        (p, sub(d, p))
    }

    /// Vertical and horizontal magnitudes of the dynamic acceleration `a - v`.
    pub fn decompose_accel(&self, a: Vec3) -> (f64, f64) {
        let (p, h) = self.project(sub(a, self.v));
        (norm(p), norm(h))
    }

    /// Vertical and horizontal magnitudes of the raw angular rate.
    pub fn decompose_gyro(&self, g: Vec3) -> (f64, f64) {
        let (p, h) = self.project(g);
        (norm(p), norm(h))
    }
}

pub fn estimate_gravity(accel: &[Vec3]) -> Result<GravityEstimate, AlignError> {
    if accel.is_empty() {
        return Err(AlignError::EmptyWindow { interval: 0 });
    }
    let n = accel.len() as f64;
    let sum = accel.iter().fold([0.0; 3], |acc, a| [acc[0] + a[0], acc[1] + a[1], acc[2] + a[2]]);
    GravityEstimate::new(scale(sum, 1.0 / n))
}

/// Per-sample 4-channel magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedRow {
    pub t_ns: i64,
    pub va: f64,
    pub ha: f64,
    pub vg: f64,
    pub hg: f64,
}

impl AlignedRow {
    pub fn values(&self) -> [f64; 4] {
        [self.va, self.ha, self.vg, self.hg]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSeries {
    pub rows: Vec<AlignedRow>,
    pub sample_rate: f64,
    /// Gravity estimation interval.
    pub window_seconds: f64,
}

impl AlignedSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_ns,va,ha,vg,hg\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.t_ns, r.va, r.ha, r.vg, r.hg));
        }
        out
    }
}

pub fn interval_len(sample_rate: f64, seconds: f64) -> usize {
    (sample_rate * seconds).round() as usize
}

/// Aligns a (filtered) recording using consecutive, non-overlapping gravity
/// intervals. A trailing partial interval is dropped.
pub fn align_recording(filtered: &Recording, interval_seconds: f64) -> Result<AlignedSeries, AlignError> {
    let len = interval_len(filtered.sample_rate, interval_seconds);
    if len == 0 {
        return Err(AlignError::EmptyWindow { interval: 0 });
    }
    if filtered.samples.len() < len {
        return Err(AlignError::RecordingTooShort { len: filtered.samples.len(), needed: len });
    }
    let mut rows = Vec::with_capacity(filtered.samples.len() / len * len);
    let mut accel = Vec::with_capacity(len);
    for (interval, chunk) in filtered.samples.chunks_exact(len).enumerate() {
        accel.clear();
        accel.extend(chunk.iter().map(|s| s.accel));
        let gravity = estimate_gravity(&accel).map_err(|e| match e {
            AlignError::EmptyWindow { .. } => AlignError::EmptyWindow { interval },
            AlignError::DegenerateGravity { norm, .. } => AlignError::DegenerateGravity { interval, norm },
            other => other,
        })?;
        rows.extend(chunk.iter().map(|s| {
            let (va, ha) = gravity.decompose_accel(s.accel);
            let (vg, hg) = gravity.decompose_gyro(s.gyro);
            AlignedRow { t_ns: s.t_ns, va, ha, vg, hg }
        }));
    }
    Ok(AlignedSeries { rows, sample_rate: filtered.sample_rate, window_seconds: interval_seconds })
}
