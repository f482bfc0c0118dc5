use super::{DspError, SegmentationConfig};
use crate::ingestion::AudioSignal;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start_s: f64,
    pub signal: AudioSignal,
}

/// Cuts `sig` into complete windows starting at 0, stride, 2*stride, ...
///
/// Window and stride are rounded to whole samples. A signal shorter than one
/// window yields a single zero-padded window when `pad_short` is set.
pub fn segment_signal(sig: &AudioSignal, cfg: &SegmentationConfig) -> Result<Vec<Segment>, DspError> {
    cfg.validate()?;
    if sig.is_empty() {
        return Err(DspError::EmptySignal);
    }
    let fs = f64::from(sig.sample_rate_hz);
    let win = (cfg.window_s * fs).round() as usize;
    let stride = ((cfg.stride_s * fs).round() as usize).max(1);
    if sig.len() < win {
        if !cfg.pad_short {
            return Err(DspError::TooShort { duration_s: sig.duration_s(), window_s: cfg.window_s });
        }
        let mut samples = sig.samples.clone();
        samples.resize(win, 0.0);
        return Ok(vec![Segment { start_s: 0.0, signal: AudioSignal::new(samples, sig.sample_rate_hz) }]);
    }
    Ok((0..=(sig.len() - win) / stride)
        .map(|k| {
            let start = k * stride;
            Segment {
                start_s: start as f64 / fs,
                signal: AudioSignal::new(sig.samples[start..start + win].to_vec(), sig.sample_rate_hz),
            }
        })
        .collect())
}
