use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BinaryTask, ModelConfig, ModelError, ResNet, TrainedModel, TrainingHistory};

pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub task: BinaryTask,
    pub config: ModelConfig,
    /// Hash of the patient split the model was trained on.
    pub split_hash: String,
    pub history: TrainingHistory,
}

pub fn save_trained_model(model: &TrainedModel, dir: &Path, split_hash: &str) -> Result<(), ModelError> {
    let io = |e: std::io::Error| ModelError::Io { path: dir.to_path_buf(), source: e };
    fs::create_dir_all(dir).map_err(io)?;
    let state: HashMap<String, _> = model.net.state_dict()?.into_iter().collect();
    candle_core::safetensors::save(&state, dir.join(WEIGHTS_FILE))?;
    let manifest = ModelManifest {
        task: model.task,
        config: model.config.clone(),
        split_hash: split_hash.to_string(),
        history: model.history.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    fs::write(dir.join(MANIFEST_FILE), json).map_err(io)
}

pub fn load_trained_model(dir: &Path) -> Result<(TrainedModel, ModelManifest), ModelError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| ModelError::Io { path: manifest_path.clone(), source: e })?;
    let manifest: ModelManifest = serde_json::from_str(&text)
        .map_err(|e| ModelError::Manifest { path: manifest_path.clone(), detail: e.to_string() })?;
    let weights = dir.join(WEIGHTS_FILE);
    if !weights.is_file() {
        return Err(ModelError::Io {
            path: weights,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "weights file missing"),
        });
    }
    let cfg = &manifest.config;
    let net = ResNet::new(&cfg.arch, cfg.dropout_p, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let tensors = candle_core::safetensors::load(&weights, &candle_core::Device::Cpu)?;
    net.load_state(&tensors.into_iter().collect(), false)?;
    let model = TrainedModel { task: manifest.task, config: cfg.clone(), net, history: manifest.history.clone() };
    Ok((model, manifest))
}
