use serde::{Deserialize, Serialize};

use super::DspError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub window_s: f64,
    pub stride_s: f64,
    /// Zero-pad recordings shorter than one window instead of rejecting them.
    pub pad_short: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { window_s: 4.0, stride_s: 1.0, pad_short: true }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if !(self.stride_s > 0.0 && self.stride_s <= self.window_s) {
            return Err(DspError::InvalidConfig(format!(
                "need 0 < stride_s <= window_s, got stride {} window {}",
                self.stride_s, self.window_s
            )));
        }
        Ok(())
    }
}

/// Log-mel spectrogram parameters. The window is always a periodic Hann
/// window and the FFT size equals the window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramConfig {
    pub n_mels: usize,
    pub stft_window_ms: f64,
    pub stft_hop_ms: f64,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self { n_mels: 64, stft_window_ms: 25.0, stft_hop_ms: 10.0, f_min_hz: 10.0, f_max_hz: 2000.0 }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |msg: String| Err(DspError::InvalidConfig(msg));
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(self.f_min_hz > 0.0 && self.f_min_hz < self.f_max_hz) {
            return bad(format!("need 0 < f_min_hz < f_max_hz, got {} and {}", self.f_min_hz, self.f_max_hz));
        }
        if !(self.stft_hop_ms > 0.0 && self.stft_hop_ms <= self.stft_window_ms) {
            return bad(format!(
                "need 0 < stft_hop_ms <= stft_window_ms, got {} and {}",
                self.stft_hop_ms, self.stft_window_ms
            ));
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate_hz: u32) -> usize {
        (self.stft_window_ms * f64::from(sample_rate_hz) / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        ((self.stft_hop_ms * f64::from(sample_rate_hz) / 1000.0).round() as usize).max(1)
    }
}
