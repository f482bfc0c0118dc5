//! Log-mel spectrogram preparation: sliding-window segmentation, STFT, mel
//! projection, dB conversion and per-spectrogram standardisation.

mod cache;
mod config;
mod mel;
mod segment;
mod spectrogram;
mod stft;

pub use cache::{SpectrogramCache, SpectrogramKey};
pub use config::{SegmentationConfig, SpectrogramConfig};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz};
pub use segment::{segment_signal, Segment};
pub use spectrogram::{log_mel_spectrogram, mel_power, Spectrogram, SpectrogramSource, LOG_FLOOR, ZERO_VARIANCE};
pub use stft::{frame_count, periodic_hann, power_spectrogram, StftGeometry};

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("signal lasts {duration_s:.3} s, shorter than the {window_s} s window")]
    TooShort { duration_s: f64, window_s: f64 },
    #[error("segment has {samples} samples, fewer than one {window} sample STFT window")]
    SegmentTooShort { samples: usize, window: usize },
    #[error("f_max {f_max_hz} Hz exceeds the Nyquist frequency {nyquist_hz} Hz")]
    NyquistExceeded { f_max_hz: f64, nyquist_hz: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty signal")]
    EmptySignal,
    #[error("spectrogram cache {path}: {detail}")]
    Cache { path: std::path::PathBuf, detail: String },
}
