//! Binary Monte-Carlo-dropout ResNet segment classifiers.

mod checkpoint;
mod config;
mod input;
mod mc;
mod network;
mod train;

use std::borrow::Cow;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_trained_model, save_trained_model, ModelManifest, MANIFEST_FILE, WEIGHTS_FILE};
pub use config::{ArchConfig, BinaryTask, BlockKind, ModelConfig, PRETRAINED_ENV};
pub use input::{batch_tensor, resize_bilinear};
pub use mc::{mc_predict, mc_predict_batch, positive_probabilities, predict_deterministic};
pub use network::{Mode, ResNet, N_CLASSES};
pub use train::{train_segment_classifier, EpochRecord, TrainingHistory};

use crate::dsp::{DspError, Spectrogram, SpectrogramCache, SpectrogramKey};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("pretrained weights requested but not available{}", .0.as_ref().map(|p| format!(" at {}", p.display())).unwrap_or_default())]
    WeightsUnavailable(Option<PathBuf>),
    #[error("tensor {name}: {detail}")]
    StateMismatch { name: String, detail: String },
    #[error("no training segments")]
    EmptyDataset,
    #[error("every training segment has the same binary label")]
    SingleClassDataset,
    #[error("{spectrograms} spectrograms but {labels} labels")]
    LabelCountMismatch { spectrograms: usize, labels: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("n_mc must be at least 1")]
    ZeroSamples,
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad manifest: {detail}")]
    Manifest { path: PathBuf, detail: String },
}

/// MC-dropout estimate for one segment under one binary task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub mean_prob: f64,
    pub std: f64,
    pub n_samples: usize,
}

/// Random-access source of training or evaluation spectrograms.
pub trait SegmentStore {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, i: usize) -> Result<Cow<'_, Spectrogram>, ModelError>;
}

impl SegmentStore for [Spectrogram] {
    fn len(&self) -> usize {
        <[Spectrogram]>::len(self)
    }

    fn get(&self, i: usize) -> Result<Cow<'_, Spectrogram>, ModelError> {
        Ok(Cow::Borrowed(&self[i]))
    }
}

impl SegmentStore for Vec<Spectrogram> {
    fn len(&self) -> usize {
        <[Spectrogram]>::len(self)
    }

    fn get(&self, i: usize) -> Result<Cow<'_, Spectrogram>, ModelError> {
        Ok(Cow::Borrowed(&self[i]))
    }
}

/// Segments read from a [`SpectrogramCache`] one at a time, so a full
/// dataset never has to sit in memory.
pub struct CachedSegments<'a> {
    cache: &'a SpectrogramCache,
    refs: Vec<(SpectrogramKey, usize)>,
}

impl<'a> CachedSegments<'a> {
    /// Every cached segment of the given recordings, in order.
    pub fn new(cache: &'a SpectrogramCache, recordings: impl IntoIterator<Item = SpectrogramKey>) -> Self {
        let mut refs = Vec::new();
        for key in recordings {
            let n = cache.segment_count(&key).unwrap_or(0);
            refs.extend((0..n).map(|i| (key.clone(), i)));
        }
        Self { cache, refs }
    }

    pub fn keys(&self) -> impl Iterator<Item = &SpectrogramKey> {
        self.refs.iter().map(|(k, _)| k)
    }
}

impl SegmentStore for CachedSegments<'_> {
    fn len(&self) -> usize {
        self.refs.len()
    }

    fn get(&self, i: usize) -> Result<Cow<'_, Spectrogram>, ModelError> {
        let (key, seg) = &self.refs[i];
        let spec = self.cache.get_segment(key, *seg)?.ok_or_else(|| {
            DspError::Cache { path: self.cache.dir().to_path_buf(), detail: format!("segment {seg} of {key:?} vanished") }
        })?;
        Ok(Cow::Owned(spec))
    }
}

/// An untrained network for one binary task.
pub struct SegmentClassifier {
    pub task: BinaryTask,
    pub config: ModelConfig,
    pub net: ResNet,
}

/// A network after training, with the history of the run that produced it.
pub struct TrainedModel {
    pub task: BinaryTask,
    pub config: ModelConfig,
    pub net: ResNet,
    pub history: TrainingHistory,
}

/// Seeded initialisation, then ImageNet weights (minus the head) when
/// `cfg.pretrained` is set.
pub fn build_bayesian_resnet(task: BinaryTask, cfg: &ModelConfig) -> Result<SegmentClassifier, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = ResNet::new(&cfg.arch, cfg.dropout_p, &mut rng)?;
    if cfg.pretrained {
        let path = cfg.resolved_pretrained_path().ok_or(ModelError::WeightsUnavailable(None))?;
        net.load_pretrained(&path)?;
    }
    Ok(SegmentClassifier { task, config: cfg.clone(), net })
}
