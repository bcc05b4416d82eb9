//! Parametric synthetic gait generator with known ground-truth speed.
//!
//! World frame: z is up. The vertical acceleration oscillates at twice the
//! step frequency (one bounce per step) with one harmonic, the forward
//! acceleration at the step frequency, and the body rocks about the two
//! horizontal axes. The whole stream is rotated into a device frame and
//! Gaussian noise is added there.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::data::{mph_to_mps, DataError, ImuSample, ManifestEntry, Recording, SessionManifest, SpeedUnit};
use crate::nn::derive_seed;

pub const GRAVITY: f64 = 9.81;
/// Treadmill protocol speeds in mph.
pub const PROTOCOL_SPEEDS_MPH: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];
pub const PROTOCOL_SUBJECTS: usize = 10;
pub const PROTOCOL_MINUTES: f64 = 5.0;
pub const MIN_DURATION_SECONDS: f64 = 4.0;
/// Relative per-subject jitter on the step-frequency and amplitude constants.
pub const SUBJECT_JITTER: f64 = 0.1;
/// Default yaw amplitude relative to the pitch amplitude.
pub const YAW_RATIO: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Matrix3 = [[f64; 3]; 3];

/// Device orientation relative to the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Orientation {
    /// Uniformly random rotation drawn from the recording seed.
    Random,
    Fixed(Matrix3),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitParams {
    /// Walking speed in m/s.
    pub speed: f64,
    /// Step frequency is `c0 + c1 · speed` Hz.
    pub c0: f64,
    pub c1: f64,
    /// Vertical acceleration amplitude per unit speed, (m/s²)/(m/s).
    pub k: f64,
    /// Forward amplitude relative to the vertical amplitude.
    pub horizontal_ratio: f64,
    /// Gyro amplitude in rad/s per Hz of step frequency.
    pub gyro_gain: f64,
    /// Yaw rate (about the vertical axis) relative to the pitch rate.
    pub yaw_ratio: f64,
    /// Relative amplitude of the second vertical harmonic.
    pub harmonic_ratio: f64,
    /// 1 = fundamental only, 2 = fundamental plus one harmonic.
    pub harmonics: usize,
    pub accel_noise: f64,
    pub gyro_noise: f64,
    pub orientation: Orientation,
}

impl Default for GaitParams {
    fn default() -> Self {
        GaitParams {
            speed: 1.0,
            c0: 1.4,
            c1: 0.6,
            k: 2.0,
            horizontal_ratio: 0.5,
            gyro_gain: 0.8,
            yaw_ratio: YAW_RATIO,
            harmonic_ratio: 0.3,
            harmonics: 2,
            accel_noise: 0.3,
            gyro_noise: 0.1,
            orientation: Orientation::Random,
        }
    }
}

impl GaitParams {
    pub fn with_speed(speed: f64) -> Self {
        GaitParams { speed, ..GaitParams::default() }
    }

    pub fn step_frequency(&self) -> f64 {
        self.c0 + self.c1 * self.speed
    }

    pub fn vertical_amplitude(&self) -> f64 {
        self.k * self.speed
    }

    pub fn gyro_amplitude(&self) -> f64 {
        self.gyro_gain * self.step_frequency()
    }

    pub fn noiseless(mut self) -> Self {
        self.accel_noise = 0.0;
        self.gyro_noise = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return bad(format!("speed must be positive, got {}", self.speed));
        }
        if !(self.step_frequency().is_finite() && self.step_frequency() > 0.0) {
            return bad("step frequency must be positive".into());
        }
        for (name, v) in [
            ("k", self.k),
            ("horizontal_ratio", self.horizontal_ratio),
            ("gyro_gain", self.gyro_gain),
            ("yaw_ratio", self.yaw_ratio),
            ("harmonic_ratio", self.harmonic_ratio),
            ("accel_noise", self.accel_noise),
            ("gyro_noise", self.gyro_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(1..=2).contains(&self.harmonics) {
            return bad(format!("harmonics must be 1 or 2, got {}", self.harmonics));
        }
        if let Orientation::Fixed(m) = self.orientation {
            if !is_rotation(&m) {
                return bad("orientation matrix is not a rotation".into());
            }
        }
        Ok(())
    }
}

fn is_rotation(m: &Matrix3) -> bool {
    let mut ok = true;
    for i in 0..3 {
        for j in 0..3 {
            let d: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
            ok &= (d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9;
        }
    }
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    ok && (det - 1.0).abs() < 1e-9
}

/// Uniform random rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3 {
    let mut q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.iter_mut().for_each(|v| *v /= n);
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotate(m: &Matrix3, v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// Applies `m` to every accelerometer and gyroscope vector.
pub fn rotate_recording(rec: &Recording, m: &Matrix3) -> Recording {
    let mut out = rec.clone();
    for s in &mut out.samples {
        s.accel = rotate(m, s.accel);
        s.gyro = rotate(m, s.gyro);
    }
    out
}

/// World-frame signal at time `t` (s) for the given phases.
fn world_sample(p: &GaitParams, t: f64, phase: &[f64; 6]) -> ([f64; 3], [f64; 3]) {
    let f = p.step_frequency();
    let a = p.vertical_amplitude();
    let mut vertical = a * (TAU * 2.0 * f * t + phase[0]).sin();
    if p.harmonics > 1 {
        vertical += a * p.harmonic_ratio * (TAU * 4.0 * f * t + phase[1]).sin();
    }
    let forward = a * p.horizontal_ratio * (TAU * f * t + phase[2]).sin();
    let g = p.gyro_amplitude();
    let pitch = g * (TAU * f * t + phase[3]).sin();
    let roll = 0.5 * g * (TAU * 2.0 * f * t + phase[4]).sin();
    let yaw = p.yaw_ratio * g * (TAU * f * t + phase[5]).sin();
    ([forward, 0.0, GRAVITY + vertical], [roll, pitch, yaw])
}

/// Deterministic recording of `duration` seconds at `sample_rate` Hz.
pub fn generate_recording(
    params: &GaitParams,
    duration: f64,
    sample_rate: f64,
    seed: u64,
    subject_id: &str,
    name: &str,
) -> Result<Recording, SynthError> {
    params.validate()?;
    if !(duration.is_finite() && duration >= MIN_DURATION_SECONDS) {
        return Err(SynthError::InvalidParams(format!("duration must be at least {MIN_DURATION_SECONDS} s, got {duration}")));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(SynthError::InvalidParams(format!("sample rate must be positive, got {sample_rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 10));
    let phase: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    let rotation = match params.orientation {
        Orientation::Fixed(m) => m,
        Orientation::Random => random_rotation(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 11))),
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 12));
    let acc_noise = Normal::new(0.0, params.accel_noise).map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    let gyro_noise = Normal::new(0.0, params.gyro_noise).map_err(|e| SynthError::InvalidParams(e.to_string()))?;

    let n = (duration * sample_rate).round() as usize;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sample_rate;
        let (acc, gyro) = world_sample(params, t, &phase);
        let mut acc = rotate(&rotation, acc);
        let mut gyro = rotate(&rotation, gyro);
        if params.accel_noise > 0.0 {
            acc.iter_mut().for_each(|v| *v += acc_noise.sample(&mut noise_rng));
        }
        if params.gyro_noise > 0.0 {
            gyro.iter_mut().for_each(|v| *v += gyro_noise.sample(&mut noise_rng));
        }
        let t_ns = (i as f64 * 1e9 / sample_rate).round() as i64;
        samples.push(ImuSample::new(t_ns, acc, gyro));
    }
    Ok(Recording::new(subject_id, name, Some(params.speed), sample_rate, samples)?)
}

/// Cohort layout and per-subject variation.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub subjects: usize,
    /// Speeds in m/s.
    pub speeds: Vec<f64>,
    pub minutes_per_speed: f64,
    pub sample_rate: f64,
    pub base: GaitParams,
    pub seed: u64,
}

impl CohortSpec {
    /// Ten subjects, the five protocol speeds, five minutes each at 100 Hz.
    pub fn protocol(seed: u64) -> Self {
        CohortSpec {
            subjects: PROTOCOL_SUBJECTS,
            speeds: protocol_speeds(),
            minutes_per_speed: PROTOCOL_MINUTES,
            sample_rate: 100.0,
            base: GaitParams::default(),
            seed,
        }
    }
}

pub fn protocol_speeds() -> Vec<f64> {
    PROTOCOL_SPEEDS_MPH.iter().map(|v| mph_to_mps(*v).expect("non-negative speed")).collect()
}

pub fn subject_id(index: usize) -> String {
    format!("S{:02}", index + 1)
}

/// Subject-specific parameters: `c0`, `c1` and `k` scaled by independent
/// uniform factors in `1 ± SUBJECT_JITTER`.
pub fn subject_params(base: &GaitParams, seed: u64, subject: usize) -> GaitParams {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, 20), subject as u64));
    let mut jitter = || 1.0 + rng.random_range(-SUBJECT_JITTER..=SUBJECT_JITTER);
    GaitParams { c0: base.c0 * jitter(), c1: base.c1 * jitter(), k: base.k * jitter(), ..base.clone() }
}

/// One recording per (subject, speed), named `<subject>_<speed index>`.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<Recording>, SynthError> {
    if spec.subjects == 0 {
        return Err(SynthError::InvalidParams("at least one subject is required".into()));
    }
    if spec.speeds.is_empty() {
        return Err(SynthError::InvalidParams("at least one speed is required".into()));
    }
    let mut out = Vec::with_capacity(spec.subjects * spec.speeds.len());
    for s in 0..spec.subjects {
        let subject = subject_id(s);
        let params = subject_params(&spec.base, spec.seed, s);
        for (k, &speed) in spec.speeds.iter().enumerate() {
            let p = GaitParams { speed, ..params.clone() };
            let rec_seed = derive_seed(derive_seed(spec.seed, 21), (s * 1000 + k) as u64);
            let name = format!("{subject}_{}", k + 1);
            out.push(generate_recording(&p, spec.minutes_per_speed * 60.0, spec.sample_rate, rec_seed, &subject, &name)?);
        }
    }
    Ok(out)
}

/// Writes each recording as `<name>.csv` in `dir` plus `manifest.csv` with
/// m/s labels, and returns the manifest.
pub fn write_cohort(dir: &Path, recordings: &[Recording]) -> Result<SessionManifest, SynthError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::Io { path: dir.to_path_buf(), source: e })?;
    let mut manifest = SessionManifest { base_dir: dir.to_path_buf(), entries: Vec::new() };
    for rec in recordings {
        let file = format!("{}.csv", rec.name);
        rec.write_csv(&dir.join(&file))?;
        manifest.entries.push(ManifestEntry {
            path: file.into(),
            subject_id: rec.subject_id.clone(),
            speed: rec.true_speed.unwrap_or(0.0),
            unit: SpeedUnit::Mps,
        });
    }
    manifest.write(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Least-squares fit of `a·sin(ωt) + b·cos(ωt) + c`; returns (amplitude, offset).
pub fn fit_sinusoid(values: &[f64], omega: f64, sample_rate: f64) -> (f64, f64) {
    // Normal equations for the three basis functions.
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (i, y) in values.iter().enumerate() {
        let t = i as f64 / sample_rate;
        let basis = [(omega * t).sin(), (omega * t).cos(), 1.0];
        for r in 0..3 {
            aty[r] += basis[r] * y;
            for c in 0..3 {
                ata[r][c] += basis[r] * basis[c];
            }
        }
    }
    let x = solve3(ata, aty);
    (x[0].hypot(x[1]), x[2])
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("non-empty");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Dominant angular frequency helper for tests and diagnostics.
pub fn vertical_omega(params: &GaitParams) -> f64 {
    2.0 * PI * 2.0 * params.step_frequency()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{welch_psd, DEFAULT_CUTOFF_HZ};
    use crate::imaging::Preprocessor;

    #[test]
    fn sample_count_and_determinism() {
        let spec = CohortSpec { subjects: 1, speeds: vec![1.0], minutes_per_speed: 1.0, ..CohortSpec::protocol(3) };
        let a = generate_cohort(&spec).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].len(), 6000);
        assert_eq!(a[0].samples[1].t_ns, 10_000_000);
        assert_eq!(a, generate_cohort(&spec).unwrap());
        let other = generate_cohort(&CohortSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn protocol_scale() {
        let spec = CohortSpec::protocol(0);
        assert_eq!(spec.subjects * spec.speeds.len(), 50);
        assert_eq!(spec.subjects as f64 * spec.speeds.len() as f64 * spec.minutes_per_speed, 250.0);
        assert!((spec.speeds[0] - 0.44704).abs() < 1e-15);
    }

    #[test]
    fn subject_jitter_bounds() {
        let base = GaitParams::default();
        for s in 0..20 {
            let p = subject_params(&base, 5, s);
            for (v, b) in [(p.c0, base.c0), (p.c1, base.c1), (p.k, base.k)] {
                assert!((v / b - 1.0).abs() <= SUBJECT_JITTER + 1e-12);
            }
        }
        assert_ne!(subject_params(&base, 5, 0), subject_params(&base, 5, 1));
    }

    #[test]
    fn invalid_params() {
        let bad = GaitParams { speed: 0.0, ..GaitParams::default() };
        assert!(matches!(generate_recording(&bad, 10.0, 100.0, 0, "s", "r"), Err(SynthError::InvalidParams(_))));
        let short = generate_recording(&GaitParams::default(), 3.0, 100.0, 0, "s", "r");
        assert!(matches!(short, Err(SynthError::InvalidParams(_))));
        let noise = GaitParams { accel_noise: -1.0, ..GaitParams::default() };
        assert!(noise.validate().is_err());
        let skew = GaitParams { orientation: Orientation::Fixed([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]), ..GaitParams::default() };
        assert!(skew.validate().is_err());
    }

    #[test]
    fn random_rotations_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(is_rotation(&random_rotation(&mut rng)));
        }
    }

    #[test]
    fn vertical_amplitude_survives_pipeline() {
        // speed 1 m/s: step frequency 2 Hz, so every 2 s gravity interval holds
        // whole periods and the gravity estimate is exact.
        let p = GaitParams { harmonics: 1, ..GaitParams::with_speed(1.0) }.noiseless();
        let rec = generate_recording(&p, 20.0, 100.0, 7, "s", "r").unwrap();
        let aligned = Preprocessor::default().align(&rec).unwrap();
        let va: Vec<f64> = aligned.rows.iter().map(|r| r.va).collect();
        // |A sin(ωt)|² = A²/2 − (A²/2) cos(2ωt): fit the squared channel.
        let sq: Vec<f64> = va.iter().map(|v| v * v).collect();
        let (amp, offset) = fit_sinusoid(&sq, 2.0 * vertical_omega(&p), 100.0);
        let a = p.vertical_amplitude();
        assert!(((2.0 * offset).sqrt() / a - 1.0).abs() < 0.02, "offset {offset}");
        assert!(((2.0 * amp).sqrt() / a - 1.0).abs() < 0.02, "amp {amp}");
        // Periodic at twice the step frequency.
        let period = (100.0 / (2.0 * p.step_frequency())).round() as usize;
        for i in 100..va.len() - 100 - period {
            assert!((va[i] - va[i + period]).abs() < 0.02 * a);
        }
    }

    #[test]
    fn rotation_invariance_of_alignment() {
        let p = GaitParams::with_speed(1.2).noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = generate_recording(&GaitParams { orientation: Orientation::Fixed(random_rotation(&mut rng)), ..p.clone() }, 10.0, 100.0, 2, "s", "r").unwrap();
        let other = generate_recording(&GaitParams { orientation: Orientation::Fixed(random_rotation(&mut rng)), ..p }, 10.0, 100.0, 2, "s", "r").unwrap();
        assert_ne!(base.samples[0].accel, other.samples[0].accel);
        let pre = Preprocessor::default();
        let (a, b) = (pre.align(&base).unwrap(), pre.align(&other).unwrap());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            for (u, v) in x.values().iter().zip(y.values()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn va_magnitude_increases_with_speed() {
        let pre = Preprocessor::default();
        let mut last = 0.0;
        for speed in protocol_speeds() {
            let rec = generate_recording(&GaitParams::with_speed(speed).noiseless(), 20.0, 100.0, 1, "s", "r").unwrap();
            let aligned = pre.align(&rec).unwrap();
            let mean = aligned.rows.iter().map(|r| r.va).sum::<f64>() / aligned.len() as f64;
            assert!(mean > last, "{speed}: {mean} <= {last}");
            last = mean;
        }
    }

    #[test]
    fn spectrum_concentrated_below_cutoff() {
        for speed in protocol_speeds() {
            let p = GaitParams::with_speed(speed).noiseless();
            assert!(p.step_frequency() <= 2.5);
            let rec = generate_recording(&p, 30.0, 100.0, 4, "s", "r").unwrap();
            let z: Vec<f64> = rec.samples.iter().map(|s| s.accel.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            let mean = z.iter().sum::<f64>() / z.len() as f64;
            let centered: Vec<f64> = z.iter().map(|v| v - mean).collect();
            let psd = welch_psd(&centered, 100.0, 1.0, 0.5).unwrap();
            let low: f64 = psd.freqs.iter().zip(&psd.power).filter(|(f, _)| **f <= DEFAULT_CUTOFF_HZ).map(|(_, p)| p).sum();
            let total: f64 = psd.power.iter().sum();
            assert!(low / total > 0.99, "{speed}: {}", low / total);
        }
    }

    #[test]
    fn cohort_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CohortSpec { subjects: 2, speeds: vec![0.6, 1.1], minutes_per_speed: 0.1, ..CohortSpec::protocol(9) };
        let recs = generate_cohort(&spec).unwrap();
        let manifest = write_cohort(dir.path(), &recs).unwrap();
        assert_eq!(manifest.entries.len(), 4);
        let reread = SessionManifest::read(&dir.path().join("manifest.csv")).unwrap();
        let loaded = crate::data::load_session(&reread, 100.0).unwrap();
        assert_eq!(loaded, recs);
    }

    #[test]
    fn sinusoid_fit_recovers_parameters() {
        let w = TAU * 3.0;
        let y: Vec<f64> = (0..500).map(|i| 2.5 * (w * i as f64 / 100.0 + 0.4).sin() + 1.5).collect();
        let (a, c) = fit_sinusoid(&y, w, 100.0);
        assert!((a - 2.5).abs() < 1e-9 && (c - 1.5).abs() < 1e-9);
    }
}
