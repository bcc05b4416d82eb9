//! Walking-speed estimation from smartphone accelerometer and gyroscope data.
//!
//! The processing chain is: low-pass filtering ([`dsp`]), orientation-independent
//! alignment ([`align`]), fixed-size gait images ([`imaging`]) and a small
//! convolutional regression network ([`nn`]). [`synth`] generates labeled
//! synthetic gait recordings and [`pipeline`] ties everything together for
//! training, prediction and the evaluation experiments.

pub mod align;
pub mod data;
pub mod dsp;
pub mod imaging;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synth;
