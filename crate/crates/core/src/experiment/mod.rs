//! Experiment runner: configuration, output layout, manifests and the
//! prepare / train / evaluate / predict / stats commands.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use commands::{majority_baseline, run_experiment, RunOutcome, SplitFile};
pub use config::{FusionRows, Overrides, RunConfig, DEFAULTS_TOML};
pub use manifest::{sha256_file, CommandManifest};

use crate::bayes_resnet::ModelError;
use crate::cascade::CascadeError;
use crate::dsp::DspError;
use crate::fusion::FusionError;
use crate::ingestion::IngestError;
use crate::scoring::ScoringError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Prepare,
    TrainDbres,
    TrainFusion,
    Evaluate,
    Predict,
    Stats,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Prepare, Command::TrainDbres, Command::TrainFusion, Command::Evaluate, Command::Predict, Command::Stats];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::TrainDbres => "train-dbres",
            Command::TrainFusion => "train-fusion",
            Command::Evaluate => "evaluate",
            Command::Predict => "predict",
            Command::Stats => "stats",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown command {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("missing model artifacts: {0}")]
    MissingArtifacts(String),
    #[error("{0}")]
    Other(String),
}

impl ExperimentError {
    /// Process exit status for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Data(_) => 3,
            ExperimentError::MissingArtifacts(_) => 4,
            ExperimentError::Other(_) => 1,
        }
    }
}

impl From<IngestError> for ExperimentError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::InvalidFraction(_) => ExperimentError::Config(e.to_string()),
            _ => ExperimentError::Data(e.to_string()),
        }
    }
}

impl From<DspError> for ExperimentError {
    fn from(e: DspError) -> Self {
        match e {
            DspError::InvalidConfig(_) | DspError::NyquistExceeded { .. } => ExperimentError::Config(e.to_string()),
            DspError::Cache { .. } => ExperimentError::Other(e.to_string()),
            _ => ExperimentError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for ExperimentError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => ExperimentError::Config(e.to_string()),
            ModelError::WeightsUnavailable(_) => ExperimentError::MissingArtifacts(e.to_string()),
            ModelError::EmptyDataset | ModelError::SingleClassDataset | ModelError::Dsp(_) => {
                ExperimentError::Data(e.to_string())
            }
            _ => ExperimentError::Other(e.to_string()),
        }
    }
}

impl From<CascadeError> for ExperimentError {
    fn from(e: CascadeError) -> Self {
        match e {
            CascadeError::Model(m) => m.into(),
            CascadeError::Dsp(d) => d.into(),
            CascadeError::InvalidThreshold(_) => ExperimentError::Config(e.to_string()),
            _ => ExperimentError::Data(e.to_string()),
        }
    }
}

impl From<FusionError> for ExperimentError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::InvalidConfig(_) => ExperimentError::Config(e.to_string()),
            FusionError::Artifact { .. } | FusionError::SchemaMismatch { .. } => {
                ExperimentError::MissingArtifacts(e.to_string())
            }
            _ => ExperimentError::Data(e.to_string()),
        }
    }
}

impl From<ScoringError> for ExperimentError {
    fn from(e: ScoringError) -> Self {
        ExperimentError::Data(e.to_string())
    }
}

/// Paths of every artifact below the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn imputer(&self) -> PathBuf {
        self.root.join("imputer.json")
    }

    pub fn features_csv(&self) -> PathBuf {
        self.root.join("features.csv")
    }

    pub fn features_json(&self) -> PathBuf {
        self.root.join("signal_features.json")
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn model(&self, slug: &str) -> PathBuf {
        self.root.join("models").join(slug)
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions")
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats")
    }

    pub fn manifest(&self, command: Command) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }
}
