//! Dual-network cascade: averages segment probabilities from the
//! Present-vs-rest and Unknown-vs-rest classifiers and turns them into one
//! patient label, checking Present first, then Unknown, else Absent.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bayes_resnet::{mc_predict_batch, ModelError, ProbEstimate, TrainedModel};
use crate::dsp::{log_mel_spectrogram, segment_signal, DspError, SegmentationConfig, Spectrogram, SpectrogramConfig, SpectrogramSource};
use crate::ingestion::AudioSignal;
use crate::label::MurmurLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub present_threshold: f64,
    pub unknown_threshold: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self { present_threshold: 0.5, unknown_threshold: 0.5 }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), CascadeError> {
        for t in [self.present_threshold, self.unknown_threshold] {
            if !(t > 0.0 && t < 1.0) {
                return Err(CascadeError::InvalidThreshold(t));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CascadeError {
    #[error("no segments to aggregate")]
    EmptySegments,
    #[error("{present} present-task estimates but {unknown} unknown-task estimates")]
    LengthMismatch { present: usize, unknown: usize },
    #[error("patient has no usable segments")]
    NoSegments,
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub label: MurmurLabel,
    pub present_mean: f64,
    pub present_std: f64,
    pub unknown_mean: f64,
    pub unknown_std: f64,
    pub n_segments: usize,
}

/// The three-branch decision on already-averaged probabilities. A mean equal
/// to its threshold takes the positive branch.
pub fn cascade_label(present_mean: f64, unknown_mean: f64, cfg: &CascadeConfig) -> MurmurLabel {
    if present_mean >= cfg.present_threshold {
        MurmurLabel::Present
    } else if unknown_mean >= cfg.unknown_threshold {
        MurmurLabel::Unknown
    } else {
        MurmurLabel::Absent
    }
}

fn mean_and_rms_std(estimates: &[ProbEstimate]) -> (f64, f64) {
    let n = estimates.len() as f64;
    let mean = estimates.iter().map(|e| e.mean_prob).sum::<f64>() / n;
    let rms = (estimates.iter().map(|e| e.std * e.std).sum::<f64>() / n).sqrt();
    (mean, rms)
}

/// Pools per-segment estimates (one entry per segment in each list). The
/// reported stds are the root-mean-square of segment stds and never affect
/// the label.
pub fn aggregate_probabilities(
    present: &[ProbEstimate],
    unknown: &[ProbEstimate],
    cfg: &CascadeConfig,
) -> Result<PatientPrediction, CascadeError> {
    if present.len() != unknown.len() {
        return Err(CascadeError::LengthMismatch { present: present.len(), unknown: unknown.len() });
    }
    if present.is_empty() {
        return Err(CascadeError::EmptySegments);
    }
    let (present_mean, present_std) = mean_and_rms_std(present);
    let (unknown_mean, unknown_std) = mean_and_rms_std(unknown);
    Ok(PatientPrediction {
        label: cascade_label(present_mean, unknown_mean, cfg),
        present_mean,
        present_std,
        unknown_mean,
        unknown_std,
        n_segments: present.len(),
    })
}

/// Spectrograms of every segment of every recording of one patient, pooled in
/// recording order.
pub fn patient_spectrograms(
    patient_id: &str,
    recordings: &[AudioSignal],
    seg: &SegmentationConfig,
    spec: &SpectrogramConfig,
) -> Result<Vec<Spectrogram>, DspError> {
    let mut out = Vec::new();
    for (index, sig) in recordings.iter().enumerate() {
        for s in segment_signal(sig, seg)? {
            let source = SpectrogramSource { patient_id: patient_id.to_string(), recording_index: index, start_s: s.start_s };
            out.push(log_mel_spectrogram(&s.signal, spec)?.with_source(source));
        }
    }
    Ok(out)
}

/// The two trained binary networks of the cascade.
pub struct DbresModels {
    pub present: TrainedModel,
    pub unknown: TrainedModel,
}

impl DbresModels {
    /// MC-dropout predictions of both networks on a patient's pooled
    /// segments, aggregated by the cascade.
    pub fn classify_spectrograms<R: Rng>(
        &self,
        specs: &[Spectrogram],
        cfg: &CascadeConfig,
        rng: &mut R,
    ) -> Result<PatientPrediction, CascadeError> {
        if specs.is_empty() {
            return Err(CascadeError::NoSegments);
        }
        let present = mc_predict_batch(&self.present, specs, self.present.config.n_mc_samples, rng)?;
        let unknown = mc_predict_batch(&self.unknown, specs, self.unknown.config.n_mc_samples, rng)?;
        aggregate_probabilities(&present, &unknown, cfg)
    }
}

/// Segments all of a patient's recordings, runs both networks on every
/// segment and applies the cascade.
pub fn classify_patient_dbres<R: Rng>(
    models: &DbresModels,
    patient_id: &str,
    recordings: &[AudioSignal],
    seg: &SegmentationConfig,
    spec: &SpectrogramConfig,
    cfg: &CascadeConfig,
    rng: &mut R,
) -> Result<PatientPrediction, CascadeError> {
    let specs = match patient_spectrograms(patient_id, recordings, seg, spec) {
        Ok(s) => s,
        Err(DspError::TooShort { .. }) => return Err(CascadeError::NoSegments),
        Err(e) => return Err(e.into()),
    };
    models.classify_spectrograms(&specs, cfg, rng)
}

pub const PREDICTION_HEADER: &str = "patient_id,label,present_mean,present_std,unknown_mean,unknown_std,n_segments";

pub fn prediction_row(patient_id: &str, p: &PatientPrediction) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{patient_id},{},{},{},{},{},{}",
        p.label, p.present_mean, p.present_std, p.unknown_mean, p.unknown_std, p.n_segments
    );
    s
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn est(ps: &[f64]) -> Vec<ProbEstimate> {
        ps.iter().map(|&p| ProbEstimate { mean_prob: p, std: 0.1, n_samples: 10 }).collect()
    }

    #[test]
    fn present_wins_first() {
        let p = aggregate_probabilities(&est(&[0.9, 0.8, 0.7]), &est(&[0.1, 0.1, 0.1]), &CascadeConfig::default())
            .unwrap();
        assert_eq!(p.label, MurmurLabel::Present);
        assert!((p.present_mean - 0.8).abs() < 1e-12);
        assert_eq!(p.n_segments, 3);
        assert!((p.present_std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unknown_second() {
        let p = aggregate_probabilities(&est(&[0.2, 0.2]), &est(&[0.7, 0.5]), &CascadeConfig::default()).unwrap();
        assert_eq!(p.label, MurmurLabel::Unknown);
        assert!((p.unknown_mean - 0.6).abs() < 1e-12);
    }

    #[test]
    fn absent_otherwise() {
        let p = aggregate_probabilities(&est(&[0.2]), &est(&[0.3]), &CascadeConfig::default()).unwrap();
        assert_eq!(p.label, MurmurLabel::Absent);
    }

    #[test]
    fn errors() {
        let cfg = CascadeConfig::default();
        assert!(matches!(aggregate_probabilities(&[], &[], &cfg), Err(CascadeError::EmptySegments)));
        assert!(matches!(
            aggregate_probabilities(&est(&[0.1]), &est(&[0.1, 0.2]), &cfg),
            Err(CascadeError::LengthMismatch { present: 1, unknown: 2 })
        ));
        assert!(CascadeConfig { present_threshold: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn ties_take_positive_branch() {
        let cfg = CascadeConfig::default();
        assert_eq!(cascade_label(0.5, 0.0, &cfg), MurmurLabel::Present);
        assert_eq!(cascade_label(0.49, 0.5, &cfg), MurmurLabel::Unknown);
    }

    #[test]
    fn two_five_second_recordings_give_four_segments() {
        let rec = AudioSignal::new((0..20_000).map(|i| (i as f64 * 0.1).sin()).collect(), 4000);
        let specs = patient_spectrograms("p", &[rec.clone(), rec], &SegmentationConfig::default(), &SpectrogramConfig::default())
            .unwrap();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[2].source.recording_index, 1);
        assert_eq!(specs[3].source.start_s, 1.0);
    }

    proptest! {
        #[test]
        fn present_priority(pm in 0.5f64..1.0, um in 0.0f64..1.0) {
            prop_assert_eq!(cascade_label(pm, um, &CascadeConfig::default()), MurmurLabel::Present);
        }

        #[test]
        fn permutation_invariant(mut ps in prop::collection::vec(0.0f64..1.0, 1..20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let us: Vec<f64> = ps.iter().map(|p| 1.0 - p).collect();
            let cfg = CascadeConfig::default();
            let a = aggregate_probabilities(&est(&ps), &est(&us), &cfg).unwrap();
            let mut pairs: Vec<(f64, f64)> = ps.iter().copied().zip(us.iter().copied()).collect();
            pairs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            ps = pairs.iter().map(|p| p.0).collect();
            let us2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let b = aggregate_probabilities(&est(&ps), &est(&us2), &cfg).unwrap();
            prop_assert_eq!(a.label, b.label);
        }

        #[test]
        fn raising_a_present_probability_keeps_present(ps in prop::collection::vec(0.0f64..1.0, 1..20), idx in any::<prop::sample::Index>(), bump in 0.0f64..1.0) {
            let cfg = CascadeConfig::default();
            let us = vec![0.3; ps.len()];
            let a = aggregate_probabilities(&est(&ps), &est(&us), &cfg).unwrap();
            let mut raised = ps.clone();
            let i = idx.index(ps.len());
            raised[i] = (raised[i] + bump).min(1.0);
            let b = aggregate_probabilities(&est(&raised), &est(&us), &cfg).unwrap();
            if a.label == MurmurLabel::Present {
                prop_assert_eq!(b.label, MurmurLabel::Present);
            }
        }
    }
}
