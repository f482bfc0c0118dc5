//! Small synthetic dataset in the challenge file layout, for tests and demos.
//!
//! Every recording is a train of damped low-frequency "lub-dub" bursts plus
//! noise. Present patients additionally carry a steady tone; Unknown
//! patients are buried in heavy broadband noise.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingestion::{
    render_patient_metadata, write_wav, AgeCategory, AudioSignal, IngestError, Location, PatientRecord, RecordingRef, Sex,
};
use crate::label::MurmurLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub max_recordings: usize,
    /// Frequency of the planted murmur tone.
    pub tone_hz: f64,
    pub tone_amplitude: f64,
    /// Class proportions (Present, Unknown, Absent).
    pub class_fractions: [f64; 3],
    /// Write the `#Murmur` line.
    pub labeled: bool,
    /// First patient id; ids count up from here.
    pub first_id: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_patients: 30,
            seed: 0,
            sample_rate_hz: 4000,
            min_duration_s: 5.0,
            max_duration_s: 7.0,
            max_recordings: 2,
            tone_hz: 300.0,
            tone_amplitude: 0.25,
            class_fractions: [0.3, 0.2, 0.5],
            labeled: true,
            first_id: 10_000,
        }
    }
}

/// Exactly `n` labels in the configured proportions (largest remainder),
/// each class getting at least one when `n >= 3`, shuffled.
fn assign_labels(n: usize, fractions: [f64; 3], rng: &mut ChaCha8Rng) -> Vec<MurmurLabel> {
    let total: f64 = fractions.iter().sum();
    let raw: Vec<f64> = fractions.iter().map(|f| f / total * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    for &k in order.iter().cycle().take(n - counts.iter().sum::<usize>()) {
        counts[k] += 1;
    }
    if n >= 3 {
        for k in 0..3 {
            if counts[k] == 0 {
                let donor = (0..3).max_by_key(|&j| counts[j]).expect("three classes");
                counts[donor] -= 1;
                counts[k] += 1;
            }
        }
    }
    let mut labels: Vec<MurmurLabel> =
        MurmurLabel::ALL.iter().zip(&counts).flat_map(|(&l, &c)| std::iter::repeat_n(l, c)).collect();
    labels.shuffle(rng);
    labels
}

pub fn synthesize_recording(label: MurmurLabel, duration_s: f64, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> AudioSignal {
    let sr = f64::from(cfg.sample_rate_hz);
    let n = (duration_s * sr).round() as usize;
    let heart_rate_hz = rng.random_range(1.0..2.0);
    let phase: f64 = rng.random();
    let noise_sd = match label {
        MurmurLabel::Unknown => 0.35,
        _ => 0.02,
    };
    let noise = Normal::new(0.0, noise_sd).expect("positive sd");
    let burst = |t: f64, f: f64| (-t * 40.0).exp() * (TAU * f * t).sin();
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let cycle = (t * heart_rate_hz + phase).fract() / heart_rate_hz;
            let mut v = 0.5 * burst(cycle, 50.0);
            if cycle > 0.3 {
                v += 0.35 * burst(cycle - 0.3, 70.0);
            }
            if label == MurmurLabel::Present {
                v += cfg.tone_amplitude * (TAU * cfg.tone_hz * t).sin();
            }
            (v + noise.sample(rng)).clamp(-0.99, 0.99)
        })
        .collect();
    AudioSignal::new(samples, cfg.sample_rate_hz)
}

const AGES: [AgeCategory; 5] =
    [AgeCategory::Neonate, AgeCategory::Infant, AgeCategory::Child, AgeCategory::Adolescent, AgeCategory::Missing];
const LOCATIONS: [Location; 4] = [Location::AV, Location::PV, Location::TV, Location::MV];

/// Writes `<id>.txt`, `<id>_<loc>.wav` and `<id>_<loc>.hea` files for every
/// patient into `dir` and returns the records as written.
pub fn generate_synthetic_dataset(dir: &Path, cfg: &SyntheticConfig) -> Result<Vec<PatientRecord>, IngestError> {
    fs::create_dir_all(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = assign_labels(cfg.n_patients, cfg.class_fractions, &mut rng);
    let mut out = Vec::with_capacity(cfg.n_patients);
    for (i, &label) in labels.iter().enumerate() {
        let id = (cfg.first_id as usize + i).to_string();
        let age = AGES[rng.random_range(0..AGES.len())];
        let sex = match rng.random_range(0..10) {
            0 => Sex::Missing,
            k if k % 2 == 0 => Sex::Female,
            _ => Sex::Male,
        };
        let (height, weight) = match age {
            AgeCategory::Missing => (None, None),
            _ if rng.random_bool(0.15) => (None, None),
            _ => (Some(rng.random_range(50.0..170.0f64).round()), Some(rng.random_range(3.0..70.0f64).round())),
        };
        let pregnant = (sex == Sex::Female && age == AgeCategory::Adolescent).then(|| rng.random_bool(0.1));
        let n_rec = rng.random_range(1..=cfg.max_recordings.clamp(1, LOCATIONS.len()));
        let mut recordings = Vec::with_capacity(n_rec);
        for loc in &LOCATIONS[..n_rec] {
            let stem = format!("{id}_{}", loc.as_str());
            let duration = rng.random_range(cfg.min_duration_s..=cfg.max_duration_s);
            let sig = synthesize_recording(label, duration, cfg, &mut rng);
            let wav = format!("{stem}.wav");
            let hea = format!("{stem}.hea");
            write_wav(&dir.join(&wav), &sig)?;
            let header = format!("{stem} 1 {} {}\n{wav} 16+44 1 16 0 0 0 0 {}\n", cfg.sample_rate_hz, sig.len(), loc.as_str());
            fs::write(dir.join(&hea), header).map_err(|source| IngestError::Io { path: dir.join(&hea), source })?;
            recordings.push(RecordingRef {
                location: *loc,
                header_file: hea,
                audio_path: wav,
                sample_rate_hz: cfg.sample_rate_hz,
                duration_s: Some(sig.duration_s()),
            });
        }
        let record = PatientRecord {
            patient_id: id.clone(),
            sample_rate_hz: cfg.sample_rate_hz,
            age_category: age,
            sex,
            height_cm: height,
            weight_kg: weight,
            pregnant,
            murmur_label: cfg.labeled.then_some(label),
            recordings,
        };
        let path = dir.join(format!("{id}.txt"));
        fs::write(&path, render_patient_metadata(&record)).map_err(|source| IngestError::Io { path, source })?;
        out.push(record);
    }
    Ok(out)
}
