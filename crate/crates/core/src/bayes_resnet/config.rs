use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::label::MurmurLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryTask {
    PresentVsRest,
    UnknownVsRest,
}

impl BinaryTask {
    pub fn positive_class(self) -> MurmurLabel {
        match self {
            BinaryTask::PresentVsRest => MurmurLabel::Present,
            BinaryTask::UnknownVsRest => MurmurLabel::Unknown,
        }
    }

    pub fn is_positive(self, label: MurmurLabel) -> bool {
        label == self.positive_class()
    }

    pub fn slug(self) -> &'static str {
        match self {
            BinaryTask::PresentVsRest => "present",
            BinaryTask::UnknownVsRest => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

impl BlockKind {
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

/// Residual network shape. The default is ResNet50.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub block: BlockKind,
    pub layers: [usize; 4],
    pub base_width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::resnet50()
    }
}

impl ArchConfig {
    pub fn resnet50() -> Self {
        Self { block: BlockKind::Bottleneck, layers: [3, 4, 6, 3], base_width: 64 }
    }

    pub fn resnet18() -> Self {
        Self { block: BlockKind::Basic, layers: [2, 2, 2, 2], base_width: 64 }
    }

    pub fn feature_width(&self) -> usize {
        self.base_width * 8 * self.block.expansion()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dropout_p: f64,
    pub n_mc_samples: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Split each optimiser batch into chunks of this size and accumulate
    /// gradients (batch-norm statistics are then per chunk).
    pub micro_batch_size: Option<usize>,
    pub max_epochs: usize,
    pub pretrained: bool,
    /// Falls back to the `MURMUR_PRETRAINED_WEIGHTS` environment variable.
    pub pretrained_path: Option<PathBuf>,
    /// Network input (height, width).
    pub input_size: [usize; 2],
    pub seed: u64,
    pub arch: ArchConfig,
    /// `None` (written `"cumulative"`) averages batch statistics
    /// cumulatively within each epoch.
    #[serde(with = "momentum_serde")]
    pub bn_momentum: Option<f64>,
    /// Upper bound on rows per forward pass during MC inference.
    pub inference_batch: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dropout_p: 0.2,
            n_mc_samples: 20,
            learning_rate: 1e-4,
            batch_size: 32,
            micro_batch_size: None,
            max_epochs: 15,
            pretrained: true,
            pretrained_path: None,
            input_size: [224, 224],
            seed: 0,
            arch: ArchConfig::resnet50(),
            bn_momentum: Some(0.1),
            inference_batch: 32,
        }
    }
}

mod momentum_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    const CUMULATIVE: &str = "cumulative";

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(m) => s.serialize_f64(*m),
            None => s.serialize_str(CUMULATIVE),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Raw>::deserialize(d)? {
            Some(Raw::Number(m)) => Ok(Some(m)),
            Some(Raw::Text(t)) if t == CUMULATIVE => Ok(None),
            Some(Raw::Text(t)) => Err(serde::de::Error::custom(format!("expected a number or \"{CUMULATIVE}\", got {t:?}"))),
            None => Ok(None),
        }
    }
}

pub const PRETRAINED_ENV: &str = "MURMUR_PRETRAINED_WEIGHTS";

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if self.n_mc_samples == 0 || self.batch_size == 0 || self.max_epochs == 0 || self.inference_batch == 0 {
            return bad("n_mc_samples, batch_size, max_epochs and inference_batch must be positive");
        }
        if self.micro_batch_size == Some(0) {
            return bad("micro_batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.input_size.iter().any(|&s| s < 16) {
            return bad("input_size must be at least 16x16");
        }
        if self.arch.base_width == 0 || self.arch.layers.iter().any(|&l| l == 0) {
            return bad("every stage needs at least one block and a positive width");
        }
        if let Some(m) = self.bn_momentum {
            if !(m > 0.0 && m <= 1.0) {
                return bad("bn_momentum must lie in (0, 1]");
            }
        }
        Ok(())
    }

    pub fn resolved_pretrained_path(&self) -> Option<PathBuf> {
        self.pretrained_path.clone().or_else(|| std::env::var_os(PRETRAINED_ENV).map(PathBuf::from))
    }
}
