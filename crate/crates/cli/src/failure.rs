//! Maps library errors onto the exit-code taxonomy.

use gaitpipe::data::DataError;
use gaitpipe::dsp::DspError;
use gaitpipe::imaging::ImagingError;
use gaitpipe::nn::NnError;
use gaitpipe::pipeline::PipelineError;
use gaitpipe::synth::SynthError;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Diverged(_) => EXIT_DIVERGED,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Diverged(m) => m,
        }
    }
}

impl From<DspError> for Failure {
    fn from(e: DspError) -> Self {
        match e {
            DspError::InvalidCutoff { .. } => Failure::Usage(format!("--cutoff: {e}")),
            DspError::EvenTapCount(_) => Failure::Usage(format!("--taps: {e}")),
            DspError::InvalidOverlap(_) | DspError::InvalidWindow(_) => Failure::Usage(format!("--psd-window/--psd-overlap: {e}")),
            DspError::SignalTooShort { .. } => Failure::Data(e.to_string()),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidSampleRate(_) => Failure::Usage(format!("--rate: {e}")),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<ImagingError> for Failure {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::Dsp(inner) => inner.into(),
            ImagingError::InvalidOverlap(_) => Failure::Usage(format!("--overlap: {e}")),
            ImagingError::UnknownChannelSet(_) => Failure::Usage(format!("--channels: {e}")),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<NnError> for Failure {
    fn from(e: NnError) -> Self {
        match e {
            NnError::InvalidConfig(_) => Failure::Usage(format!("training flags: {e}")),
            NnError::InvalidDropout(_) => Failure::Usage(format!("--dropout: {e}")),
            NnError::Divergence { .. } => Failure::Diverged(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidParams(_) => Failure::Usage(e.to_string()),
            SynthError::Data(inner) => inner.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            PipelineError::Imaging(inner) => inner.into(),
            PipelineError::Nn(inner) => inner.into(),
            PipelineError::Data(inner) => inner.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}
