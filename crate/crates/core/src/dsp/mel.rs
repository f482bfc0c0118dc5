use ndarray::Array2;

use super::DspError;

/// HTK-style mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank of shape `[n_mels, n_fft/2 + 1]`.
///
/// Filter centres are uniformly spaced in mel between `mel(f_min)` and
/// `mel(f_max)`; each triangle rises from the previous centre and falls to the
/// next, with unit peak. Each half-width is at least one FFT bin spacing, so a
/// filter narrower than the frequency resolution still covers the bin nearest
/// its centre and no row is empty.
pub fn mel_filterbank(
    n_mels: usize,
    f_min_hz: f64,
    f_max_hz: f64,
    sample_rate_hz: u32,
    n_fft: usize,
) -> Result<Array2<f64>, DspError> {
    let nyquist = f64::from(sample_rate_hz) / 2.0;
    if f_max_hz > nyquist {
        return Err(DspError::NyquistExceeded { f_max_hz, nyquist_hz: nyquist });
    }
    if n_mels == 0 || n_fft == 0 || !(f_min_hz >= 0.0 && f_min_hz < f_max_hz) {
        return Err(DspError::InvalidConfig(format!(
            "filterbank needs n_mels >= 1, n_fft >= 1 and 0 <= f_min < f_max (got {n_mels}, {n_fft}, {f_min_hz}, {f_max_hz})"
        )));
    }
    let n_bins = n_fft / 2 + 1;
    let bin_hz = f64::from(sample_rate_hz) / n_fft as f64;
    let (lo, hi) = (hz_to_mel(f_min_hz), hz_to_mel(f_max_hz));
    let edges: Vec<f64> =
        (0..n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)).collect();
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let centre = edges[m + 1];
        let left = (centre - edges[m]).max(bin_hz);
        let right = (edges[m + 2] - centre).max(bin_hz);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f <= centre { 1.0 - (centre - f) / left } else { 1.0 - (f - centre) / right };
            if w > 0.0 {
                fb[[m, k]] = w;
            }
        }
    }
    Ok(fb)
}
