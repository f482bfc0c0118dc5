use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window of length `n` (the DFT-even variant).
pub fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Number of complete frames, no centre padding.
pub fn frame_count(n_samples: usize, window: usize, hop: usize) -> usize {
    if n_samples < window {
        0
    } else {
        1 + (n_samples - window) / hop
    }
}

/// Frame geometry of a windowed power STFT whose FFT size equals the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftGeometry {
    pub window: usize,
    pub hop: usize,
}

impl StftGeometry {
    pub fn n_bins(&self) -> usize {
        self.window / 2 + 1
    }

    pub fn bin_hz(&self, bin: usize, sample_rate_hz: u32) -> f64 {
        bin as f64 * f64::from(sample_rate_hz) / self.window as f64
    }
}

/// Power spectrogram `|X|^2`, shape `[n_frames, n_fft/2 + 1]`.
pub fn power_spectrogram(samples: &[f64], geom: StftGeometry) -> Array2<f64> {
    let n_frames = frame_count(samples.len(), geom.window, geom.hop);
    let n_bins = geom.n_bins();
    let mut out = Array2::zeros((n_frames, n_bins));
    if n_frames == 0 {
        return out;
    }
    let window = periodic_hann(geom.window);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(geom.window);
    let mut buf = vec![Complex::new(0.0, 0.0); geom.window];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for (f, mut row) in out.outer_iter_mut().enumerate() {
        let start = f * geom.hop;
        for (b, (x, w)) in buf.iter_mut().zip(samples[start..start + geom.window].iter().zip(&window)) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (r, c) in row.iter_mut().zip(&buf[..n_bins]) {
            *r = c.norm_sqr();
        }
    }
    out
}
