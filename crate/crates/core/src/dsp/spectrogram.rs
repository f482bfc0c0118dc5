use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{mel_filterbank, power_spectrogram, DspError, SpectrogramConfig, StftGeometry};
use crate::ingestion::AudioSignal;

/// Power floor applied before the dB conversion.
pub const LOG_FLOOR: f64 = 1e-10;
/// Below this variance a spectrogram is treated as constant and zeroed.
pub const ZERO_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramSource {
    pub patient_id: String,
    pub recording_index: usize,
    pub start_s: f64,
}

/// Standardised log-mel spectrogram, shape `[n_mels, n_frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<f32>,
    pub source: SpectrogramSource,
}

impl Spectrogram {
    pub fn new(values: Array2<f32>) -> Self {
        Self { values, source: SpectrogramSource::default() }
    }

    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn with_source(mut self, source: SpectrogramSource) -> Self {
        self.source = source;
        self
    }
}

fn geometry(segment: &AudioSignal, cfg: &SpectrogramConfig) -> Result<StftGeometry, DspError> {
    cfg.validate()?;
    let geom = StftGeometry {
        window: cfg.window_samples(segment.sample_rate_hz),
        hop: cfg.hop_samples(segment.sample_rate_hz),
    };
    if geom.window == 0 || segment.len() < geom.window {
        return Err(DspError::SegmentTooShort { samples: segment.len(), window: geom.window });
    }
    Ok(geom)
}

/// Mel-band energies before the log, shape `[n_mels, n_frames]`.
pub fn mel_power(segment: &AudioSignal, cfg: &SpectrogramConfig) -> Result<Array2<f64>, DspError> {
    let geom = geometry(segment, cfg)?;
    let fb = mel_filterbank(cfg.n_mels, cfg.f_min_hz, cfg.f_max_hz, segment.sample_rate_hz, geom.window)?;
    let power = power_spectrogram(&segment.samples, geom);
    Ok(fb.dot(&power.t()))
}

/// `10 log10(max(E, 1e-10))` of the mel energies, standardised to zero mean and
/// unit variance over the whole matrix (all zeros when the variance vanishes).
pub fn log_mel_spectrogram(segment: &AudioSignal, cfg: &SpectrogramConfig) -> Result<Spectrogram, DspError> {
    let mut db = mel_power(segment, cfg)?.mapv(|e| 10.0 * e.max(LOG_FLOOR).log10());
    let n = db.len() as f64;
    let mean = db.sum() / n;
    let var = db.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var < ZERO_VARIANCE {
        db.fill(0.0);
    } else {
        let std = var.sqrt();
        db.mapv_inplace(|v| (v - mean) / std);
    }
    Ok(Spectrogram { values: db.mapv(|v| v as f32), source: SpectrogramSource::default() })
}
