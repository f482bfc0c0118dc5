//! Boosted-tree fusion of DBRes outputs, demographics and signal features
//! into a ternary patient label.

pub mod gbdt;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cascade::PatientPrediction;
use crate::ingestion::DemographicVector;
use crate::label::MurmurLabel;
use crate::signal_features::SignalFeatureVector;
use gbdt::{BoostParams, Booster};

pub const FUSION_WIDTH: usize = 27;
pub const DBRES_NAMES: [&str; 4] = ["present_mean", "present_std", "unknown_mean", "unknown_std"];
pub const MODEL_FILE: &str = "fusion_model.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Canonical feature order: DBRes block, demographic block, signal block
/// (the latter prefixed `sig_`).
pub static FEATURE_NAMES: LazyLock<Vec<String>> = LazyLock::new(|| {
    DBRES_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain(DemographicVector::NAMES.iter().map(|s| s.to_string()))
        .chain(SignalFeatureVector::NAMES.iter().map(|s| format!("sig_{s}")))
        .collect()
});

/// Short hash of an ordered feature-name list.
pub fn schema_hash(names: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(b"fusion-v1");
    for n in names {
        h.update(n.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())[..16].to_string()
}

pub static FEATURE_SCHEMA: LazyLock<String> = LazyLock::new(|| schema_hash(&FEATURE_NAMES));

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("patient has no recordings to average features over")]
    NoRecordings,
    #[error("no training rows")]
    EmptyDataset,
    #[error("every training row has the same label")]
    SingleClassDataset,
    #[error("fusion vector has width {got}, model expects {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("feature schema {got} does not match the model's {expected}")]
    SchemaMismatch { expected: String, got: String },
    #[error("non-finite value in feature {0}")]
    NonFinite(String),
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {detail}")]
    Artifact { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionVector {
    pub values: Vec<f64>,
    /// Hash of the feature names the values are ordered by.
    pub schema: String,
}

impl FusionVector {
    pub fn dbres_block(&self) -> &[f64] {
        &self.values[..4]
    }

    pub fn demographic_block(&self) -> &[f64] {
        &self.values[4..10]
    }

    pub fn signal_block(&self) -> &[f64] {
        &self.values[10..]
    }
}

/// Concatenates the three blocks; the signal block is the element-wise mean
/// over the patient's recordings.
pub fn build_fusion_vector(
    pred: &PatientPrediction,
    demo: &DemographicVector,
    sig_feats: &[SignalFeatureVector],
) -> Result<FusionVector, FusionError> {
    if sig_feats.is_empty() {
        return Err(FusionError::NoRecordings);
    }
    let mut sig = [0.0; SignalFeatureVector::WIDTH];
    for f in sig_feats {
        for (acc, v) in sig.iter_mut().zip(f.to_array()) {
            *acc += v;
        }
    }
    let n = sig_feats.len() as f64;
    let mut values = vec![pred.present_mean, pred.present_std, pred.unknown_mean, pred.unknown_std];
    values.extend(demo.to_array());
    values.extend(sig.iter().map(|s| s / n));
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(FusionError::NonFinite(FEATURE_NAMES[i].clone()));
    }
    Ok(FusionVector { values, schema: FEATURE_SCHEMA.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionModelConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for FusionModelConfig {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: 4, learning_rate: 0.1, lambda: 1.0, min_child_weight: 1.0, subsample: 1.0, seed: 0 }
    }
}

impl FusionModelConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: &str| Err(FusionError::InvalidConfig(m.into()));
        if self.n_trees == 0 || self.max_depth == 0 {
            return bad("n_trees and max_depth must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lambda >= 0.0) || !(self.min_child_weight >= 0.0) {
            return bad("learning_rate must be positive, lambda and min_child_weight non-negative");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        Ok(())
    }

    fn boost_params(&self) -> BoostParams {
        BoostParams {
            n_rounds: self.n_trees,
            max_depth: self.max_depth,
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            min_child_weight: self.min_child_weight,
            subsample: self.subsample,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub config: FusionModelConfig,
    pub feature_names: Vec<String>,
    pub schema: String,
    /// Class order is (Present, Unknown, Absent).
    pub booster: Booster,
}

pub fn train_fusion_model(rows: &[(FusionVector, MurmurLabel)], cfg: &FusionModelConfig) -> Result<FusionModel, FusionError> {
    cfg.validate()?;
    let Some((first, _)) = rows.first() else { return Err(FusionError::EmptyDataset) };
    if rows.iter().all(|(_, l)| *l == rows[0].1) {
        return Err(FusionError::SingleClassDataset);
    }
    for (v, _) in rows {
        if v.values.len() != first.values.len() {
            return Err(FusionError::WidthMismatch { expected: first.values.len(), got: v.values.len() });
        }
        if v.schema != first.schema {
            return Err(FusionError::SchemaMismatch { expected: first.schema.clone(), got: v.schema.clone() });
        }
    }
    let x: Vec<Vec<f64>> = rows.iter().map(|(v, _)| v.values.clone()).collect();
    let y: Vec<usize> = rows.iter().map(|(_, l)| l.index()).collect();
    let booster = gbdt::fit(&x, &y, 3, &cfg.boost_params(), |_, _| {});
    let feature_names = if first.schema == *FEATURE_SCHEMA {
        FEATURE_NAMES.clone()
    } else {
        (0..first.values.len()).map(|i| format!("f{i}")).collect()
    };
    Ok(FusionModel { config: cfg.clone(), feature_names, schema: first.schema.clone(), booster })
}

/// Label and (Present, Unknown, Absent) probabilities. Ties go to the
/// earlier class in that order.
pub fn classify_patient_fused(model: &FusionModel, vec: &FusionVector) -> Result<(MurmurLabel, [f64; 3]), FusionError> {
    if vec.values.len() != model.booster.n_features {
        return Err(FusionError::WidthMismatch { expected: model.booster.n_features, got: vec.values.len() });
    }
    if vec.schema != model.schema {
        return Err(FusionError::SchemaMismatch { expected: model.schema.clone(), got: vec.schema.clone() });
    }
    let p = model.booster.predict_proba(&vec.values);
    Ok((argmax_label([p[0], p[1], p[2]]), [p[0], p[1], p[2]]))
}

pub fn argmax_label(p: [f64; 3]) -> MurmurLabel {
    let mut best = 0;
    for k in 1..3 {
        if p[k] > p[best] {
            best = k;
        }
    }
    MurmurLabel::ALL[best]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionManifest {
    pub config: FusionModelConfig,
    pub schema: String,
    pub feature_names: Vec<String>,
    pub split_hash: String,
    /// Whether training rows came from DBRes outputs on patients the
    /// networks were not trained on.
    pub out_of_fold_rows: bool,
    pub n_rows: usize,
}

pub fn save_fusion_model(model: &FusionModel, dir: &Path, manifest: &FusionManifest) -> Result<(), FusionError> {
    let err = |path: PathBuf, e: std::io::Error| FusionError::Artifact { path, detail: e.to_string() };
    fs::create_dir_all(dir).map_err(|e| err(dir.to_path_buf(), e))?;
    let m = dir.join(MODEL_FILE);
    fs::write(&m, serde_json::to_string(model).expect("model serialises")).map_err(|e| err(m.clone(), e))?;
    let p = dir.join(MANIFEST_FILE);
    fs::write(&p, serde_json::to_string_pretty(manifest).expect("manifest serialises") + "\n").map_err(|e| err(p.clone(), e))
}

/// Loads a model and refuses it if its schema differs from the manifest's or
/// from the current canonical feature order.
pub fn load_fusion_model(dir: &Path) -> Result<(FusionModel, FusionManifest), FusionError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|e| FusionError::Artifact { path, detail: e.to_string() })
    };
    let parse_err = |name: &str, e: serde_json::Error| FusionError::Artifact { path: dir.join(name), detail: e.to_string() };
    let model: FusionModel = serde_json::from_str(&read(MODEL_FILE)?).map_err(|e| parse_err(MODEL_FILE, e))?;
    let manifest: FusionManifest = serde_json::from_str(&read(MANIFEST_FILE)?).map_err(|e| parse_err(MANIFEST_FILE, e))?;
    for got in [&manifest.schema, &model.schema] {
        if *got != *FEATURE_SCHEMA {
            return Err(FusionError::SchemaMismatch { expected: FEATURE_SCHEMA.clone(), got: got.clone() });
        }
    }
    Ok((model, manifest))
}
