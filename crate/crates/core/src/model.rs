//! Trained speed model: network weights plus everything the prediction path
//! needs to reproduce training-time preprocessing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::imaging::{ChannelSet, GaitImage, Normalizer, Preprocessor};
use crate::nn::network::Layer;
use crate::nn::{Network, NnError};

pub const MODEL_MAGIC: &str = "gaitpipe-model v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedModel {
    pub network: Network,
    pub normalizer: Normalizer,
    pub channels: ChannelSet,
    pub preprocessor: Preprocessor,
    pub info: TrainingInfo,
}

/// Where a model came from; carried into evaluation reports.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingInfo {
    pub seed: u64,
    pub train_images: usize,
    pub config_hash: String,
}

impl TrainingInfo {
    fn encode(&self) -> String {
        let hash = if self.config_hash.is_empty() { "-" } else { &self.config_hash };
        format!("seed={} images={} config_hash={hash}", self.seed, self.train_images)
    }

    fn decode(s: &str) -> Result<Self, NnError> {
        let mut info = TrainingInfo::default();
        let fields: Vec<&str> = s.split(' ').collect();
        let bad = || corrupt(format!("bad training line `{s}`"));
        if fields.len() != 3 {
            return Err(bad());
        }
        for field in fields {
            match field.split_once('=').ok_or_else(bad)? {
                ("seed", v) => info.seed = v.parse().map_err(|_| bad())?,
                ("images", v) => info.train_images = v.parse().map_err(|_| bad())?,
                ("config_hash", "-") => info.config_hash.clear(),
                ("config_hash", v) => info.config_hash = v.to_string(),
                _ => return Err(bad()),
            }
        }
        Ok(info)
    }
}

fn floats(name: &str, values: &[f64]) -> String {
    let mut line = format!("{name} {}", values.len());
    for v in values {
        write!(line, " {v:.16e}").expect("write to string");
    }
    line
}

fn corrupt(msg: impl Into<String>) -> NnError {
    NnError::CorruptModelFile(msg.into())
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), NnError> {
        self.inner.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| corrupt(format!("truncated before {what}")))
    }

    /// Reads `key rest` and returns `rest`.
    fn keyed(&mut self, key: &str) -> Result<&'a str, NnError> {
        let (n, line) = self.next(key)?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| corrupt(format!("line {n}: expected `{key}`")))
    }

    fn floats_into(&mut self, name: &str, dst: &mut [f64]) -> Result<(), NnError> {
        let rest = self.keyed(name)?;
        let mut parts = rest.split(' ');
        let count: usize = parts
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| corrupt(format!("{name}: missing count")))?;
        if count != dst.len() {
            return Err(corrupt(format!("{name}: expected {} values, header says {count}", dst.len())));
        }
        let mut filled = 0;
        for (slot, p) in dst.iter_mut().zip(parts.by_ref()) {
            *slot = p.parse().map_err(|_| corrupt(format!("{name}: bad value `{p}`")))?;
            filled += 1;
        }
        if filled != count || parts.next().is_some() {
            return Err(corrupt(format!("{name}: expected {count} values")));
        }
        Ok(())
    }
}

impl SpeedModel {
    /// Inference on raw (unnormalized) images.
    pub fn predict(&self, images: &[GaitImage]) -> Result<Vec<f64>, NnError> {
        let normalized: Vec<GaitImage> = images
            .iter()
            .map(|img| {
                let mut img = img.clone();
                img.apply_mask(self.channels);
                self.normalizer.apply(&img)
            })
            .collect();
        self.network.predict(&normalized)
    }

    pub fn to_text(&self) -> String {
        let mut out = Vec::new();
        out.push(MODEL_MAGIC.to_string());
        out.push(format!("architecture {}", self.network.fingerprint()));
        out.push(format!("channels {}", self.channels.as_str()));
        out.push(format!(
            "preprocess cutoff_hz={:.16e} num_taps={} window_seconds={:.16e}",
            self.preprocessor.cutoff_hz, self.preprocessor.num_taps, self.preprocessor.window_seconds
        ));
        out.push(format!("normalizer {}", self.normalizer.encode()));
        out.push(format!("training {}", self.info.encode()));
        let chain = self.network.shape_chain().expect("model network chains");
        for (idx, (layer, (_, shape))) in self.network.layers.iter().zip(&chain).enumerate() {
            let shape = format!("{}x{}x{}", shape[1], shape[2], shape[3]);
            out.push(format!("layer {idx} {} out={shape}", layer.kind()));
            match layer {
                Layer::Conv(c) => {
                    out.push(floats("weights", &c.weights));
                    out.push(floats("bias", &c.bias));
                }
                Layer::BatchNorm(b) => {
                    out.push(floats("gamma", &b.gamma));
                    out.push(floats("beta", &b.beta));
                    out.push(floats("running_mean", &b.running_mean));
                    out.push(floats("running_var", &b.running_var));
                    out.push(floats("settings", &[b.momentum, b.epsilon]));
                }
                Layer::Dense(d) => {
                    out.push(floats("weights", &d.weights));
                    out.push(floats("bias", &d.bias));
                }
                Layer::Dropout(d) => out.push(floats("rate", &[d.rate()])),
                Layer::Relu(_) | Layer::MaxPool(_) => {}
            }
        }
        out.push("end".to_string());
        let mut text = out.join("\n");
        text.push('\n');
        text
    }

    pub fn from_text(text: &str) -> Result<Self, NnError> {
        let mut lines = Lines { inner: text.lines().enumerate() };
        let (_, magic) = lines.next("header")?;
        if magic != MODEL_MAGIC {
            return Err(corrupt(format!("unsupported header `{magic}`")));
        }
        let fingerprint = lines.keyed("architecture")?;
        let rate = fingerprint
            .split_once("dropout(")
            .and_then(|(_, rest)| rest.split_once(')'))
            .and_then(|(r, _)| r.parse::<f64>().ok())
            .ok_or_else(|| corrupt(format!("architecture without dropout rate: `{fingerprint}`")))?;
        let mut network = Network::with_dropout(0, rate).map_err(|_| corrupt(format!("bad dropout rate {rate}")))?;
        if fingerprint != network.fingerprint() {
            return Err(corrupt(format!("architecture mismatch: `{fingerprint}`")));
        }
        let channels: ChannelSet =
            lines.keyed("channels")?.parse().map_err(|_| corrupt("unknown channel set"))?;
        let preprocessor = parse_preprocess(lines.keyed("preprocess")?)?;
        let normalizer = Normalizer::decode(lines.keyed("normalizer")?).ok_or_else(|| corrupt("bad normalizer"))?;
        let info = TrainingInfo::decode(lines.keyed("training")?)?;

        let chain = network.shape_chain()?;
        for (idx, (layer, (_, shape))) in network.layers.iter_mut().zip(&chain).enumerate() {
            let expected = format!("{idx} {} out={}x{}x{}", layer.kind(), shape[1], shape[2], shape[3]);
            let got = lines.keyed("layer")?;
            if got != expected {
                return Err(corrupt(format!("layer mismatch: expected `{expected}`, got `{got}`")));
            }
            match layer {
                Layer::Conv(c) => {
                    lines.floats_into("weights", &mut c.weights)?;
                    lines.floats_into("bias", &mut c.bias)?;
                }
                Layer::BatchNorm(b) => {
                    lines.floats_into("gamma", &mut b.gamma)?;
                    lines.floats_into("beta", &mut b.beta)?;
                    lines.floats_into("running_mean", &mut b.running_mean)?;
                    lines.floats_into("running_var", &mut b.running_var)?;
                    let mut settings = [0.0; 2];
                    lines.floats_into("settings", &mut settings)?;
                    if settings[1] <= 0.0 || b.running_var.iter().any(|v| *v < 0.0) {
                        return Err(corrupt("invalid batch-norm statistics"));
                    }
                    b.momentum = settings[0];
                    b.epsilon = settings[1];
                }
                Layer::Dense(d) => {
                    lines.floats_into("weights", &mut d.weights)?;
                    lines.floats_into("bias", &mut d.bias)?;
                }
                Layer::Dropout(d) => {
                    let mut rate = [0.0];
                    lines.floats_into("rate", &mut rate)?;
                    if rate[0] != d.rate() {
                        return Err(corrupt(format!("dropout rate {} differs from architecture", rate[0])));
                    }
                }
                Layer::Relu(_) | Layer::MaxPool(_) => {}
            }
        }
        let (n, end) = lines.next("end marker")?;
        if end != "end" {
            return Err(corrupt(format!("line {n}: expected `end`")));
        }
        Ok(SpeedModel { network, normalizer, channels, preprocessor, info })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn parse_preprocess(s: &str) -> Result<Preprocessor, NnError> {
    let mut pre = Preprocessor::default();
    let mut seen = 0;
    for field in s.split(' ') {
        let (k, v) = field.split_once('=').ok_or_else(|| corrupt(format!("bad preprocess field `{field}`")))?;
        let bad = || corrupt(format!("bad value for {k}"));
        match k {
            "cutoff_hz" => pre.cutoff_hz = v.parse().map_err(|_| bad())?,
            "num_taps" => pre.num_taps = v.parse().map_err(|_| bad())?,
            "window_seconds" => pre.window_seconds = v.parse().map_err(|_| bad())?,
            _ => return Err(corrupt(format!("unknown preprocess field `{k}`"))),
        }
        seen += 1;
    }
    if seen != 3 {
        return Err(corrupt("incomplete preprocess line"));
    }
    Ok(pre)
}
