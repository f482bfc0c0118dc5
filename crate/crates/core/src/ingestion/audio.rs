use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{IngestError, RecordingRef};

/// Mono audio with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        debug_assert!(sample_rate_hz > 0);
        Self { samples, sample_rate_hz }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

fn check_spec(path: &Path, spec: &WavSpec) -> Result<(), IngestError> {
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(IngestError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: format!(
                "{} channel(s), {} bits, {:?}; expected mono 16-bit PCM",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    Ok(())
}

fn open(path: &Path) -> Result<WavReader<std::io::BufReader<std::fs::File>>, IngestError> {
    WavReader::open(path).map_err(|source| IngestError::Wav { path: path.to_path_buf(), source })
}

/// Reads a mono 16-bit PCM recording, scaling samples by 1/32768. The sample
/// rate comes from the file header, not from the metadata.
pub fn load_recording(rec: &RecordingRef) -> Result<AudioSignal, IngestError> {
    let path = Path::new(&rec.audio_path);
    let reader = open(path)?;
    let spec = reader.spec();
    check_spec(path, &spec)?;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| IngestError::Wav { path: path.to_path_buf(), source })?;
    if samples.is_empty() {
        return Err(IngestError::EmptyAudio(path.to_path_buf()));
    }
    if spec.sample_rate != rec.sample_rate_hz {
        log::debug!("{}: header rate {} Hz overrides metadata rate {} Hz", rec.audio_path, spec.sample_rate, rec.sample_rate_hz);
    }
    Ok(AudioSignal::new(samples, spec.sample_rate))
}

/// Recording length in seconds read from the wav header only.
pub fn probe_duration(path: &Path) -> Result<f64, IngestError> {
    let reader = open(path)?;
    let spec = reader.spec();
    check_spec(path, &spec)?;
    Ok(f64::from(reader.duration()) / f64::from(spec.sample_rate))
}

/// Writes `signal` as mono 16-bit PCM, clipping to [-1, 1).
pub fn write_wav(path: &Path, signal: &AudioSignal) -> Result<(), IngestError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wrap = |source| IngestError::Wav { path: path.to_path_buf(), source };
    let mut writer = WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &signal.samples {
        let v = (s * 32768.0).round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16;
        writer.write_sample(v).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}
