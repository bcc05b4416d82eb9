//! Spectral analysis and the FIR low-pass used to denoise every sensor channel.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::data::Recording;

pub const DEFAULT_CUTOFF_HZ: f64 = 15.0;
pub const DEFAULT_NUM_TAPS: usize = 65;
pub const DEFAULT_PSD_WINDOW_SECONDS: f64 = 1.0;
pub const DEFAULT_PSD_OVERLAP: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("signal has {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },
    #[error("overlap fraction {0} outside [0, 1)")]
    InvalidOverlap(f64),
    #[error("cutoff {cutoff_hz} Hz must lie in (0, {nyquist_hz}) (Nyquist bound at sample rate {sample_rate_hz} Hz)")]
    InvalidCutoff { cutoff_hz: f64, sample_rate_hz: f64, nyquist_hz: f64 },
    #[error("tap count {0} must be odd")]
    EvenTapCount(usize),
    #[error("invalid analysis window of {0} s")]
    InvalidWindow(f64),
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    /// Density per bin, unit²/Hz.
    pub power: Vec<f64>,
    pub window_seconds: f64,
    pub overlap_fraction: f64,
}

impl PsdEstimate {
    pub fn bin_width(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// Integral of the density over frequency (rectangle rule).
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.bin_width()
    }

    pub fn peak_frequency(&self) -> f64 {
        let (idx, _) = self
            .power
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        self.freqs[idx]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,power\n");
        for (f, p) in self.freqs.iter().zip(&self.power) {
            out.push_str(&format!("{f},{p}\n"));
        }
        out
    }
}

/// Periodic Hann window, the usual choice for spectral averaging.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

/// Symmetric Hamming window.
pub fn hamming_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let m = (len - 1) as f64;
    (0..len).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / m).cos()).collect()
}

/// Welch estimate: Hann-windowed segments of `window_seconds`, hop of
/// `(1 - overlap_fraction)` segments, averaged one-sided periodograms scaled to
/// density (divided by `fs * sum(w²)`).
pub fn welch_psd(
    signal: &[f64],
    sample_rate_hz: f64,
    window_seconds: f64,
    overlap_fraction: f64,
) -> Result<PsdEstimate, DspError> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(DspError::InvalidOverlap(overlap_fraction));
    }
    let seg_len = (window_seconds * sample_rate_hz).round() as usize;
    if !(window_seconds > 0.0) || seg_len < 2 {
        return Err(DspError::InvalidWindow(window_seconds));
    }
    if signal.len() < seg_len {
        return Err(DspError::SignalTooShort { len: signal.len(), needed: seg_len });
    }
    let overlap = (seg_len as f64 * overlap_fraction).floor() as usize;
    let hop = (seg_len - overlap).max(1);

    let window = hann_window(seg_len);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg_len);
    let n_bins = seg_len / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); seg_len];
    let mut segments = 0usize;

    let mut start = 0;
    while start + seg_len <= signal.len() {
        let seg = &signal[start..start + seg_len];
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += hop;
    }

    let scale = 1.0 / (sample_rate_hz * window_power * segments as f64);
    let nyquist_bin = if seg_len % 2 == 0 { Some(n_bins - 1) } else { None };
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            // One-sided: fold negative frequencies except DC and Nyquist.
            let fold = if k == 0 || Some(k) == nyquist_bin { 1.0 } else { 2.0 };
            p * scale * fold
        })
        .collect();
    let freqs = (0..n_bins).map(|k| k as f64 * sample_rate_hz / seg_len as f64).collect();
    Ok(PsdEstimate { freqs, power, window_seconds, overlap_fraction })
}

/// Linear-phase FIR with an odd number of symmetric taps.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
    cutoff_hz: f64,
    sample_rate_hz: f64,
}

impl FirFilter {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn cutoff_hz(&self) -> f64 {
        self.cutoff_hz
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn group_delay(&self) -> usize {
        self.taps.len() / 2
    }

    /// Magnitude of the frequency response at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let (re, im) = self.taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &h)| {
            let phase = omega * n as f64;
            (re + h * phase.cos(), im - h * phase.sin())
        });
        re.hypot(im)
    }
}

/// Windowed-sinc (Hamming) low-pass normalized to unit DC gain.
pub fn design_lowpass(cutoff_hz: f64, sample_rate_hz: f64, num_taps: usize) -> Result<FirFilter, DspError> {
    let nyquist_hz = sample_rate_hz / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist_hz) {
        return Err(DspError::InvalidCutoff { cutoff_hz, sample_rate_hz, nyquist_hz });
    }
    if num_taps % 2 == 0 {
        return Err(DspError::EvenTapCount(num_taps));
    }
    let fc = cutoff_hz / sample_rate_hz;
    let mid = (num_taps / 2) as isize;
    let window = hamming_window(num_taps);
    let mut taps: Vec<f64> = (0..num_taps)
        .map(|n| {
            let k = (n as isize - mid) as f64;
            let sinc = if k == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * k).sin() / (PI * k) };
            sinc * window[n]
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    // Enforce exact symmetry after normalization.
    for n in 0..num_taps / 2 {
        let avg = 0.5 * (taps[n] + taps[num_taps - 1 - n]);
        taps[n] = avg;
        taps[num_taps - 1 - n] = avg;
    }
    Ok(FirFilter { taps, cutoff_hz, sample_rate_hz })
}

/// Phase-aligned filtering: the signal is extended by symmetric reflection (edge
/// sample repeated) by the group delay on both ends, convolved, and the centered
/// part is returned so `out[i]` corresponds to `signal[i]`.
pub fn apply_filter(filter: &FirFilter, signal: &[f64]) -> Result<Vec<f64>, DspError> {
    let taps = &filter.taps;
    if signal.len() < taps.len() {
        return Err(DspError::SignalTooShort { len: signal.len(), needed: taps.len() });
    }
    let half = filter.group_delay();
    let n = signal.len();
    let mut padded = Vec::with_capacity(n + 2 * half);
    padded.extend((0..half).rev().map(|k| signal[k]));
    padded.extend_from_slice(signal);
    padded.extend((0..half).map(|k| signal[n - 1 - k]));

    // Symmetric taps: correlation and convolution coincide.
    Ok((0..n)
        .map(|i| padded[i..i + taps.len()].iter().zip(taps).map(|(x, h)| x * h).sum())
        .collect())
}

/// Filters all six sensor channels of a recording independently.
pub fn filter_recording(filter: &FirFilter, rec: &Recording) -> Result<Recording, DspError> {
    let n = rec.samples.len();
    let mut out = rec.clone();
    let mut channel = vec![0.0; n];
    for axis in 0..6 {
        for (c, s) in channel.iter_mut().zip(&rec.samples) {
            *c = if axis < 3 { s.accel[axis] } else { s.gyro[axis - 3] };
        }
        let filtered = apply_filter(filter, &channel)?;
        for (s, v) in out.samples.iter_mut().zip(filtered) {
            if axis < 3 {
                s.accel[axis] = v;
            } else {
                s.gyro[axis - 3] = v;
            }
        }
    }
    Ok(out)
}
