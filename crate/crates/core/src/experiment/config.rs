use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::bayes_resnet::{ArchConfig, BlockKind, ModelConfig};
use crate::cascade::CascadeConfig;
use crate::dsp::{SegmentationConfig, SpectrogramConfig};
use crate::fusion::FusionModelConfig;

/// Which patients supply the fusion model's training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRows {
    /// DBRes outputs on the validation fold, which the networks never trained on.
    OutOfFold,
    /// DBRes outputs on every training patient, including the networks' own
    /// training data.
    AllTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Patients to label with `predict`; defaults to `data_dir`.
    pub predict_dir: Option<PathBuf>,
    pub seed: u64,
    pub heldout_fraction: f64,
    pub validation_fraction: f64,
    pub deterministic: bool,
    pub use_pretrained: bool,
    pub fusion_rows: FusionRows,
    pub write_plots: bool,
    pub segmentation: SegmentationConfig,
    pub spectrogram: SpectrogramConfig,
    pub present_model: ModelConfig,
    pub unknown_model: ModelConfig,
    pub cascade: CascadeConfig,
    pub fusion: FusionModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/default"),
            predict_dir: None,
            seed: 0,
            heldout_fraction: 0.2,
            validation_fraction: 0.2,
            deterministic: false,
            use_pretrained: true,
            fusion_rows: FusionRows::OutOfFold,
            write_plots: true,
            segmentation: SegmentationConfig::default(),
            spectrogram: SpectrogramConfig::default(),
            present_model: ModelConfig::default(),
            unknown_model: ModelConfig::default(),
            cascade: CascadeConfig::default(),
            fusion: FusionModelConfig::default(),
        }
    }
}

/// Every default in one place, with notes. Parses to `RunConfig::default()`.
pub const DEFAULTS_TOML: &str = r#"# Input patients: <id>.txt metadata next to .wav/.hea files.
data_dir = "data"
# All artifacts are written below this directory.
output_dir = "runs/default"
# Unlabeled patients for `predict` (defaults to data_dir).
# predict_dir = "..."
seed = 0
# Stratified patient-level held-out fraction for `evaluate`.
heldout_fraction = 0.2
# Share of the training patients kept aside to pick the best epoch and to
# supply fusion training rows.
validation_fraction = 0.2
# Seed MC-dropout sampling per patient so repeated runs are byte-identical.
deterministic = false
# Start both networks from ImageNet weights (path from the model config or
# MURMUR_PRETRAINED_WEIGHTS).
use_pretrained = true
# "out_of_fold" or "all_train".
fusion_rows = "out_of_fold"
write_plots = true

[segmentation]
window_s = 4.0
stride_s = 1.0
# Zero-pad recordings shorter than one window instead of dropping them.
pad_short = true

[spectrogram]
n_mels = 64
stft_window_ms = 25.0
stft_hop_ms = 10.0
f_min_hz = 10.0
f_max_hz = 2000.0

# Both networks share these defaults; override per task below.
[present_model]
dropout_p = 0.2
n_mc_samples = 20
learning_rate = 1e-4
batch_size = 32
max_epochs = 15
pretrained = true
input_size = [224, 224]
seed = 0
bn_momentum = 0.1
inference_batch = 32
# Accumulate gradients over sub-batches of this size (default: whole batch).
# micro_batch_size = 8

[present_model.arch]
block = "bottleneck"
layers = [3, 4, 6, 3]
base_width = 64

[unknown_model]
dropout_p = 0.2
n_mc_samples = 20
learning_rate = 1e-4
batch_size = 32
max_epochs = 15
pretrained = true
input_size = [224, 224]
seed = 0
bn_momentum = 0.1
inference_batch = 32

[unknown_model.arch]
block = "bottleneck"
layers = [3, 4, 6, 3]
base_width = 64

[cascade]
present_threshold = 0.5
unknown_threshold = 0.5

[fusion]
n_trees = 200
max_depth = 4
learning_rate = 0.1
lambda = 1.0
min_child_weight = 1.0
subsample = 1.0
seed = 0
"#;

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub no_pretrained: bool,
    pub deterministic: bool,
}

impl RunConfig {
    /// Reads a TOML config, or the `config` field of a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            #[derive(Deserialize)]
            struct WithConfig {
                config: RunConfig,
            }
            let m: WithConfig = serde_json::from_str(&text)
                .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
            return Ok(m.config);
        }
        Self::from_toml(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.data_dir {
            self.data_dir = d.clone();
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.no_pretrained {
            self.use_pretrained = false;
        }
        if o.deterministic {
            self.deterministic = true;
        }
    }

    /// Final configuration as used by every command: model seeds derive from
    /// the run seed and `use_pretrained` gates both networks.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.present_model.seed = self.seed.wrapping_add(1);
        r.unknown_model.seed = self.seed.wrapping_add(2);
        r.fusion.seed = self.seed.wrapping_add(3);
        r.present_model.pretrained &= self.use_pretrained;
        r.unknown_model.pretrained &= self.use_pretrained;
        r
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg_err = |e: String| ExperimentError::Config(e);
        for (name, f) in [("heldout_fraction", self.heldout_fraction), ("validation_fraction", self.validation_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(cfg_err(format!("{name} must lie in (0, 1)")));
            }
        }
        self.segmentation.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.spectrogram.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.present_model.validate().map_err(|e| cfg_err(format!("present_model: {e}")))?;
        self.unknown_model.validate().map_err(|e| cfg_err(format!("unknown_model: {e}")))?;
        self.cascade.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.fusion.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(())
    }

    /// Small, fast settings for the synthetic dataset: a narrow residual
    /// network on 64x128 inputs, trained from scratch for two epochs.
    pub fn smoke(data_dir: &Path, output_dir: &Path) -> Self {
        let model = ModelConfig {
            dropout_p: 0.2,
            n_mc_samples: 20,
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 2,
            pretrained: false,
            input_size: [64, 128],
            arch: ArchConfig { block: BlockKind::Basic, layers: [1, 1, 1, 1], base_width: 16 },
            bn_momentum: None,
            inference_batch: 64,
            ..Default::default()
        };
        Self {
            data_dir: data_dir.to_path_buf(),
            output_dir: output_dir.to_path_buf(),
            deterministic: true,
            use_pretrained: false,
            write_plots: false,
            present_model: model.clone(),
            unknown_model: model,
            fusion: FusionModelConfig { n_trees: 50, ..Default::default() },
            ..Default::default()
        }
    }
}
