//! Per-recording summary features for the fusion model: time-domain moments,
//! full-recording spectrum statistics, and frame-wise spectral centroid,
//! rolloff and bandwidth summarised by mean and standard deviation.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{power_spectrogram, DspError, SpectrogramConfig, StftGeometry};
use crate::ingestion::{AudioSignal, Location};

pub const ROLLOFF_FRACTION: f64 = 0.85;
/// Frames with total power below this are silent.
pub const SILENT_POWER: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalFeatureVector {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub rms: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub zero_crossing_rate: f64,
    pub dominant_frequency_hz: f64,
    pub spectral_entropy: f64,
    pub total_power: f64,
    pub centroid_mean_hz: f64,
    pub centroid_std_hz: f64,
    pub rolloff_mean_hz: f64,
    pub rolloff_std_hz: f64,
    pub bandwidth_mean_hz: f64,
    pub bandwidth_std_hz: f64,
}

impl SignalFeatureVector {
    pub const WIDTH: usize = 17;
    pub const NAMES: [&'static str; 17] = [
        "mean",
        "std",
        "min",
        "max",
        "rms",
        "skewness",
        "kurtosis",
        "zero_crossing_rate",
        "dominant_frequency_hz",
        "spectral_entropy",
        "total_power",
        "centroid_mean_hz",
        "centroid_std_hz",
        "rolloff_mean_hz",
        "rolloff_std_hz",
        "bandwidth_mean_hz",
        "bandwidth_std_hz",
    ];

    pub fn to_array(&self) -> [f64; 17] {
        [
            self.mean,
            self.std,
            self.min,
            self.max,
            self.rms,
            self.skewness,
            self.kurtosis,
            self.zero_crossing_rate,
            self.dominant_frequency_hz,
            self.spectral_entropy,
            self.total_power,
            self.centroid_mean_hz,
            self.centroid_std_hz,
            self.rolloff_mean_hz,
            self.rolloff_std_hz,
            self.bandwidth_mean_hz,
            self.bandwidth_std_hz,
        ]
    }

    pub fn from_array(a: [f64; 17]) -> Self {
        Self {
            mean: a[0],
            std: a[1],
            min: a[2],
            max: a[3],
            rms: a[4],
            skewness: a[5],
            kurtosis: a[6],
            zero_crossing_rate: a[7],
            dominant_frequency_hz: a[8],
            spectral_entropy: a[9],
            total_power: a[10],
            centroid_mean_hz: a[11],
            centroid_std_hz: a[12],
            rolloff_mean_hz: a[13],
            rolloff_std_hz: a[14],
            bandwidth_mean_hz: a[15],
            bandwidth_std_hz: a[16],
        }
    }
}

/// Frame-wise spectral descriptors in Hz.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpectralDescriptors {
    pub centroid: Vec<f64>,
    pub rolloff: Vec<f64>,
    pub bandwidth: Vec<f64>,
}

fn descriptors_of_frame(power: &[f64], freqs: &[f64]) -> (f64, f64, f64) {
    let total: f64 = power.iter().sum();
    if total < SILENT_POWER {
        return (0.0, 0.0, 0.0);
    }
    let centroid = power.iter().zip(freqs).map(|(p, f)| p * f).sum::<f64>() / total;
    let threshold = ROLLOFF_FRACTION * total;
    let mut cumulative = 0.0;
    let mut rolloff = *freqs.last().unwrap_or(&0.0);
    for (p, f) in power.iter().zip(freqs) {
        cumulative += p;
        if cumulative >= threshold {
            rolloff = *f;
            break;
        }
    }
    let spread = power.iter().zip(freqs).map(|(p, f)| (f - centroid).powi(2) * p).sum::<f64>() / total;
    (centroid, rolloff, spread.max(0.0).sqrt())
}

/// Spectral centroid, 85 % rolloff and bandwidth per STFT frame, using the
/// same windowing as the spectrogram pipeline.
pub fn frame_spectral_descriptors(sig: &AudioSignal, cfg: &SpectrogramConfig) -> Result<SpectralDescriptors, DspError> {
    let geom = StftGeometry { window: cfg.window_samples(sig.sample_rate_hz), hop: cfg.hop_samples(sig.sample_rate_hz) };
    if geom.window == 0 || sig.len() < geom.window {
        return Err(DspError::SegmentTooShort { samples: sig.len(), window: geom.window });
    }
    let power = power_spectrogram(&sig.samples, geom);
    let freqs: Vec<f64> = (0..geom.n_bins()).map(|k| geom.bin_hz(k, sig.sample_rate_hz)).collect();
    let mut out = SpectralDescriptors::default();
    for row in power.outer_iter() {
        let (c, r, b) = descriptors_of_frame(row.as_slice().expect("standard layout"), &freqs);
        out.centroid.push(c);
        out.rolloff.push(r);
        out.bandwidth.push(b);
    }
    Ok(out)
}

/// Running mean / population standard deviation (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningMoments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0).sqrt()
        }
    }
}

/// Two-pass mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn zero_crossing_rate(samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let changes = samples.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count();
    changes as f64 / (samples.len() - 1) as f64
}

pub fn extract_signal_features(sig: &AudioSignal) -> Result<SignalFeatureVector, DspError> {
    extract_signal_features_with(sig, &SpectrogramConfig::default())
}

/// Same as [`extract_signal_features`] with an explicit STFT configuration for
/// the frame-wise descriptors. Signals shorter than one STFT window get zero
/// descriptor summaries.
pub fn extract_signal_features_with(sig: &AudioSignal, cfg: &SpectrogramConfig) -> Result<SignalFeatureVector, DspError> {
    let x = &sig.samples;
    if x.is_empty() {
        return Err(DspError::EmptySignal);
    }
    let n = x.len() as f64;
    let (mean, std) = mean_std(x);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total_power = x.iter().map(|v| v * v).sum::<f64>() / n;
    let m2 = std * std;
    let (m3, m4) = x.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = v - mean;
        (a + d.powi(3), b + d.powi(4))
    });
    let (skewness, kurtosis) = if m2 > 1e-300 { (m3 / n / m2.powf(1.5), m4 / n / (m2 * m2) - 3.0) } else { (0.0, 0.0) };

    // full-recording spectrum, rectangular window
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let power: Vec<f64> = buf[..x.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
    let spectrum_total: f64 = power.iter().sum();
    let dominant_bin = power.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
    let dominant_frequency_hz = dominant_bin as f64 * f64::from(sig.sample_rate_hz) / n;
    let spectral_entropy = if spectrum_total > 0.0 {
        -power
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| {
                let q = p / spectrum_total;
                q * q.ln()
            })
            .sum::<f64>()
    } else {
        0.0
    };

    let desc = match frame_spectral_descriptors(sig, cfg) {
        Ok(d) => d,
        Err(DspError::SegmentTooShort { .. }) => SpectralDescriptors::default(),
        Err(e) => return Err(e),
    };
    let summarise = |series: &[f64]| {
        let mut m = RunningMoments::default();
        series.iter().for_each(|&v| m.push(v));
        (m.mean(), m.std())
    };
    let (centroid_mean_hz, centroid_std_hz) = summarise(&desc.centroid);
    let (rolloff_mean_hz, rolloff_std_hz) = summarise(&desc.rolloff);
    let (bandwidth_mean_hz, bandwidth_std_hz) = summarise(&desc.bandwidth);

    Ok(SignalFeatureVector {
        mean,
        std,
        min,
        max,
        rms: total_power.sqrt(),
        skewness,
        kurtosis,
        zero_crossing_rate: zero_crossing_rate(x),
        dominant_frequency_hz,
        spectral_entropy,
        total_power,
        centroid_mean_hz,
        centroid_std_hz,
        rolloff_mean_hz,
        rolloff_std_hz,
        bandwidth_mean_hz,
        bandwidth_std_hz,
    })
}

/// One feature-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub patient_id: String,
    pub location: Location,
    pub features: SignalFeatureVector,
}

pub fn feature_table_csv(rows: &[FeatureRow]) -> String {
    let mut out = String::from("patient_id,location");
    for name in SignalFeatureVector::NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.patient_id);
        out.push(',');
        out.push_str(r.location.as_str());
        for v in r.features.to_array() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}
