use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Command, CommandManifest, ExperimentError, FusionRows, Layout, RunConfig};
use crate::bayes_resnet::{
    build_bayesian_resnet, load_trained_model, save_trained_model, train_segment_classifier, BinaryTask, CachedSegments,
    TrainedModel,
};
use crate::cascade::{patient_spectrograms, prediction_row, DbresModels, PatientPrediction, PREDICTION_HEADER};
use crate::dsp::{log_mel_spectrogram, segment_signal, DspError, Spectrogram, SpectrogramCache, SpectrogramKey, SpectrogramSource};
use crate::fusion::{
    build_fusion_vector, classify_patient_fused, load_fusion_model, save_fusion_model, train_fusion_model, FusionManifest,
    FusionModel, FusionVector,
};
use crate::ingestion::{
    dataset_stats, encode_demographics, load_patients, load_recording, split_dataset, Imputer, PatientRecord,
};
use crate::label::MurmurLabel;
use crate::scoring::{score_report, ScoreReport};
use crate::signal_features::{extract_signal_features_with, feature_table_csv, FeatureRow, SignalFeatureVector};

/// What a command produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub command: Command,
    pub manifest: PathBuf,
    pub summary: String,
}

/// Patient-level partition written by `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub heldout_fraction: f64,
    pub validation_fraction: f64,
    pub heldout: Vec<String>,
    /// Training patients the networks are fitted on.
    pub dbres_train: Vec<String>,
    /// Training patients used for epoch selection and out-of-fold fusion rows.
    pub dbres_val: Vec<String>,
    pub labels: BTreeMap<String, MurmurLabel>,
    pub hash: String,
}

impl SplitFile {
    pub fn train(&self) -> Vec<String> {
        let mut t: Vec<String> = self.dbres_train.iter().chain(&self.dbres_val).cloned().collect();
        t.sort();
        t
    }

    fn compute_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, ids) in [("heldout", &self.heldout), ("dbres_train", &self.dbres_train), ("dbres_val", &self.dbres_val)] {
            h.update(name.as_bytes());
            for id in ids {
                h.update(b"\0");
                h.update(id.as_bytes());
            }
            h.update(b"\n");
        }
        hex::encode(h.finalize())[..16].to_string()
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Other(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    write_file(path, serde_json::to_string_pretty(value).expect("serialisable") + "\n")
}

/// Reads an artifact written by an earlier command; absence is a missing-artifact error.
fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, produced_by: Command) -> Result<T, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|_| {
        ExperimentError::MissingArtifacts(format!("{} not found; run `{produced_by}` first", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn labeled_patients(dir: &Path) -> Result<Vec<PatientRecord>, ExperimentError> {
    let all = load_patients(dir)?;
    let n_all = all.len();
    let labeled: Vec<PatientRecord> = all.into_iter().filter(|p| p.murmur_label.is_some()).collect();
    if labeled.len() < n_all {
        warn!("ignoring {} unlabeled patients in {}", n_all - labeled.len(), dir.display());
    }
    if labeled.is_empty() {
        return Err(ExperimentError::Data(format!("no labeled patients in {}", dir.display())));
    }
    Ok(labeled)
}

fn by_id(patients: &[PatientRecord]) -> BTreeMap<&str, &PatientRecord> {
    patients.iter().map(|p| (p.patient_id.as_str(), p)).collect()
}

fn select<'a>(index: &BTreeMap<&str, &'a PatientRecord>, ids: &[String]) -> Result<Vec<&'a PatientRecord>, ExperimentError> {
    ids.iter()
        .map(|id| {
            index.get(id.as_str()).copied().ok_or_else(|| {
                ExperimentError::Data(format!("patient {id} from the split is no longer in the data directory"))
            })
        })
        .collect()
}

fn recording_keys(p: &PatientRecord) -> impl Iterator<Item = SpectrogramKey> + '_ {
    (0..p.recordings.len()).map(|i| SpectrogramKey { patient_id: p.patient_id.clone(), recording_index: i })
}

/// FNV-1a, used to give each patient its own MC-dropout stream.
fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn mc_rng(cfg: &RunConfig, patient_id: &str) -> ChaCha8Rng {
    if cfg.deterministic {
        ChaCha8Rng::seed_from_u64(cfg.seed ^ stable_hash(patient_id))
    } else {
        ChaCha8Rng::from_os_rng()
    }
}

fn open_cache(cfg: &RunConfig, layout: &Layout) -> Result<SpectrogramCache, ExperimentError> {
    Ok(SpectrogramCache::open(&layout.cache(), &cfg.segmentation, &cfg.spectrogram)?)
}

fn recording_spectrograms(
    cfg: &RunConfig,
    patient_id: &str,
    index: usize,
    sig: &crate::ingestion::AudioSignal,
) -> Result<Vec<Spectrogram>, DspError> {
    let segments = match segment_signal(sig, &cfg.segmentation) {
        Ok(s) => s,
        Err(DspError::TooShort { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };
    segments
        .iter()
        .map(|s| {
            let source = SpectrogramSource { patient_id: patient_id.to_string(), recording_index: index, start_s: s.start_s };
            Ok(log_mel_spectrogram(&s.signal, &cfg.spectrogram)?.with_source(source))
        })
        .collect()
}

type SignalFeatureTable = BTreeMap<String, Vec<[f64; 17]>>;

/// Recordings processed per parallel chunk, bounding memory on large datasets.
const PREPARE_CHUNK: usize = 64;

fn prepare(cfg: &RunConfig, layout: &Layout) -> Result<RunOutcome, ExperimentError> {
    let patients = labeled_patients(&cfg.data_dir)?;
    let split = split_dataset(&patients, cfg.heldout_fraction, cfg.seed)?;
    let inner = split_dataset(&split.train, cfg.validation_fraction, cfg.seed.wrapping_add(17))?;
    let mut split_file = SplitFile {
        seed: cfg.seed,
        heldout_fraction: cfg.heldout_fraction,
        validation_fraction: cfg.validation_fraction,
        heldout: split.heldout_ids(),
        dbres_train: inner.train_ids(),
        dbres_val: inner.heldout_ids(),
        labels: patients.iter().map(|p| (p.patient_id.clone(), p.label().expect("filtered"))).collect(),
        hash: String::new(),
    };
    split_file.hash = split_file.compute_hash();
    write_json(&layout.split(), &split_file)?;
    write_json(&layout.imputer(), &Imputer::fit(&split.train))?;

    let mut cache = open_cache(cfg, layout)?;
    let jobs: Vec<(&PatientRecord, usize)> =
        patients.iter().flat_map(|p| (0..p.recordings.len()).map(move |i| (p, i))).collect();
    let mut rows = Vec::with_capacity(jobs.len());
    let mut table: SignalFeatureTable = BTreeMap::new();
    let mut n_segments = 0usize;
    let mut computed = 0usize;
    for chunk in jobs.chunks(PREPARE_CHUNK) {
        let results: Vec<Result<_, ExperimentError>> = chunk
            .par_iter()
            .map(|&(p, i)| {
                let key = SpectrogramKey { patient_id: p.patient_id.clone(), recording_index: i };
                let sig = load_recording(&p.recordings[i])?;
                let features = extract_signal_features_with(&sig, &cfg.spectrogram)?;
                let specs =
                    if cache.contains(&key) { None } else { Some(recording_spectrograms(cfg, &p.patient_id, i, &sig)?) };
                Ok((p, i, key, features, specs))
            })
            .collect();
        for r in results {
            let (p, i, key, features, specs) = r?;
            if let Some(specs) = specs {
                cache.put(key.clone(), &specs)?;
                computed += 1;
            }
            n_segments += cache.segment_count(&key).unwrap_or(0);
            rows.push(FeatureRow { patient_id: p.patient_id.clone(), location: p.recordings[i].location, features: features.clone() });
            table.entry(p.patient_id.clone()).or_default().push(features.to_array());
        }
    }
    cache.flush()?;
    write_file(&layout.features_csv(), feature_table_csv(&rows))?;
    write_json(&layout.features_json(), &table)?;

    let mut m = CommandManifest::new(Command::Prepare, cfg);
    for p in &patients {
        m.add_input(&cfg.data_dir.join(format!("{}.txt", p.patient_id)))?;
        for r in &p.recordings {
            m.add_input(Path::new(&r.audio_path))?;
        }
    }
    for path in [layout.split(), layout.imputer(), layout.features_csv(), layout.features_json(), cache.dir().to_path_buf()] {
        m.add_artifact(layout, &path)?;
    }
    m.summary.insert("patients".into(), patients.len().into());
    m.summary.insert("recordings".into(), jobs.len().into());
    m.summary.insert("segments".into(), n_segments.into());
    m.summary.insert("split_hash".into(), split_file.hash.clone().into());
    let summary = format!(
        "{} patients ({} held out), {} recordings, {} segments ({} recordings newly cached)",
        patients.len(),
        split_file.heldout.len(),
        jobs.len(),
        n_segments,
        computed
    );
    Ok(RunOutcome { command: Command::Prepare, manifest: m.write(layout)?, summary })
}

/// Cached segments of the given patients with their binary targets.
fn task_segments<'a>(
    cache: &'a SpectrogramCache,
    patients: &[&PatientRecord],
    labels: &BTreeMap<String, MurmurLabel>,
    task: BinaryTask,
) -> Result<(CachedSegments<'a>, Vec<bool>), ExperimentError> {
    for p in patients {
        for key in recording_keys(p) {
            if !cache.contains(&key) {
                return Err(ExperimentError::MissingArtifacts(format!(
                    "no cached spectrograms for patient {} recording {}; run `prepare` first",
                    key.patient_id, key.recording_index
                )));
            }
        }
    }
    let store = CachedSegments::new(cache, patients.iter().flat_map(|p| recording_keys(p)));
    let targets = store.keys().map(|k| task.is_positive(labels[&k.patient_id])).collect();
    Ok((store, targets))
}

fn train_dbres(cfg: &RunConfig, layout: &Layout) -> Result<RunOutcome, ExperimentError> {
    let split: SplitFile = read_json(&layout.split(), Command::Prepare)?;
    let patients = load_patients(&cfg.data_dir)?;
    let index = by_id(&patients);
    let train = select(&index, &split.dbres_train)?;
    let val = select(&index, &split.dbres_val)?;
    let cache = open_cache(cfg, layout)?;

    let mut m = CommandManifest::new(Command::TrainDbres, cfg);
    m.add_input(&layout.split())?;
    let mut summary = String::new();
    for (task, model_cfg) in [(BinaryTask::PresentVsRest, &cfg.present_model), (BinaryTask::UnknownVsRest, &cfg.unknown_model)] {
        let (train_store, train_y) = task_segments(&cache, &train, &split.labels, task)?;
        let (val_store, val_y) = task_segments(&cache, &val, &split.labels, task)?;
        info!(
            "training {} network on {} segments ({} positive), validating on {}",
            task.slug(),
            train_y.len(),
            train_y.iter().filter(|&&y| y).count(),
            val_y.len()
        );
        let model = build_bayesian_resnet(task, model_cfg)?;
        let trained = train_segment_classifier(model, &train_store, &train_y, Some((&val_store, val_y.as_slice())))?;
        let dir = layout.model(task.slug());
        save_trained_model(&trained, &dir, &split.hash)?;
        m.add_artifact(layout, &dir)?;
        let best = &trained.history.epochs[trained.history.best_epoch - 1];
        let _ = writeln!(
            summary,
            "{}: best epoch {} of {}, val balanced accuracy {}",
            task.slug(),
            trained.history.best_epoch,
            trained.history.epochs.len(),
            best.val_balanced_accuracy.map_or("n/a".into(), |v| format!("{v:.3}"))
        );
        m.summary.insert(format!("{}_history", task.slug()), serde_json::to_value(&trained.history).expect("serialisable"));
    }
    Ok(RunOutcome { command: Command::TrainDbres, manifest: m.write(layout)?, summary })
}

fn load_dbres(layout: &Layout) -> Result<DbresModels, ExperimentError> {
    let load = |task: BinaryTask| -> Result<TrainedModel, ExperimentError> {
        let dir = layout.model(task.slug());
        load_trained_model(&dir).map(|(m, _)| m).map_err(|e| {
            ExperimentError::MissingArtifacts(format!("{} model in {}: {e}; run `train-dbres` first", task.slug(), dir.display()))
        })
    };
    Ok(DbresModels { present: load(BinaryTask::PresentVsRest)?, unknown: load(BinaryTask::UnknownVsRest)? })
}

fn cached_patient_segments(cache: &SpectrogramCache, p: &PatientRecord) -> Result<Vec<Spectrogram>, ExperimentError> {
    let mut out = Vec::new();
    for key in recording_keys(p) {
        let specs = cache.get(&key)?.ok_or_else(|| {
            ExperimentError::MissingArtifacts(format!("no cached spectrograms for patient {}; run `prepare` first", p.patient_id))
        })?;
        out.extend(specs);
    }
    Ok(out)
}

fn dbres_predict(
    cfg: &RunConfig,
    models: &DbresModels,
    patient_id: &str,
    specs: &[Spectrogram],
) -> Result<PatientPrediction, ExperimentError> {
    let mut rng = mc_rng(cfg, patient_id);
    Ok(models.classify_spectrograms(specs, &cfg.cascade, &mut rng)?)
}

fn patient_features(table: &SignalFeatureTable, patient_id: &str) -> Result<Vec<SignalFeatureVector>, ExperimentError> {
    let rows = table.get(patient_id).ok_or_else(|| {
        ExperimentError::MissingArtifacts(format!("no signal features for patient {patient_id}; run `prepare` first"))
    })?;
    Ok(rows.iter().map(|a| SignalFeatureVector::from_array(*a)).collect())
}

fn fusion_vector(
    pred: &PatientPrediction,
    p: &PatientRecord,
    imputer: &Imputer,
    feats: &[SignalFeatureVector],
) -> Result<FusionVector, ExperimentError> {
    let demo = encode_demographics(p, imputer)?;
    Ok(build_fusion_vector(pred, &demo, feats)?)
}

fn train_fusion(cfg: &RunConfig, layout: &Layout) -> Result<RunOutcome, ExperimentError> {
    let split: SplitFile = read_json(&layout.split(), Command::Prepare)?;
    let imputer: Imputer = read_json(&layout.imputer(), Command::Prepare)?;
    let table: SignalFeatureTable = read_json(&layout.features_json(), Command::Prepare)?;
    let models = load_dbres(layout)?;
    let patients = load_patients(&cfg.data_dir)?;
    let index = by_id(&patients);
    let ids = match cfg.fusion_rows {
        FusionRows::OutOfFold => split.dbres_val.clone(),
        FusionRows::AllTrain => split.train(),
    };
    let cache = open_cache(cfg, layout)?;
    let mut rows = Vec::with_capacity(ids.len());
    for p in select(&index, &ids)? {
        let specs = cached_patient_segments(&cache, p)?;
        let pred = dbres_predict(cfg, &models, &p.patient_id, &specs)?;
        let v = fusion_vector(&pred, p, &imputer, &patient_features(&table, &p.patient_id)?)?;
        rows.push((v, split.labels[&p.patient_id]));
    }
    let model = train_fusion_model(&rows, &cfg.fusion)?;
    let manifest = FusionManifest {
        config: cfg.fusion.clone(),
        schema: model.schema.clone(),
        feature_names: model.feature_names.clone(),
        split_hash: split.hash.clone(),
        out_of_fold_rows: cfg.fusion_rows == FusionRows::OutOfFold,
        n_rows: rows.len(),
    };
    let dir = layout.model("fusion");
    save_fusion_model(&model, &dir, &manifest)?;

    let mut m = CommandManifest::new(Command::TrainFusion, cfg);
    for path in [layout.split(), layout.imputer(), layout.features_json()] {
        m.add_input(&path)?;
    }
    for slug in ["present", "unknown"] {
        m.add_input(&layout.model(slug).join(crate::bayes_resnet::WEIGHTS_FILE))?;
    }
    m.add_artifact(layout, &dir)?;
    m.summary.insert("rows".into(), rows.len().into());
    let summary = format!("fusion model fitted on {} patients ({:?} rows)", rows.len(), cfg.fusion_rows);
    Ok(RunOutcome { command: Command::TrainFusion, manifest: m.write(layout)?, summary })
}

fn fused_row(patient_id: &str, pred: &PatientPrediction, label: MurmurLabel, probs: [f64; 3]) -> String {
    let fused = PatientPrediction { label, ..pred.clone() };
    format!("{},{},{},{}", prediction_row(patient_id, &fused), probs[0], probs[1], probs[2])
}

const FUSED_HEADER_SUFFIX: &str = ",prob_present,prob_unknown,prob_absent";

/// Majority class of the training labels, predicted for every held-out patient.
pub fn majority_baseline(train_labels: &[MurmurLabel], heldout_labels: &[MurmurLabel]) -> Result<(MurmurLabel, ScoreReport), ExperimentError> {
    let mut counts = [0usize; 3];
    for l in train_labels {
        counts[l.index()] += 1;
    }
    // ties go to the earlier label in (Present, Unknown, Absent) order
    let mut best = 0;
    for k in 1..3 {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    let majority = MurmurLabel::ALL[best];
    let pairs: Vec<_> = heldout_labels.iter().map(|&t| (t, majority)).collect();
    Ok((majority, score_report(&pairs)?))
}

fn write_report(layout: &Layout, name: &str, report: &ScoreReport, m: &mut CommandManifest) -> Result<(), ExperimentError> {
    let json = layout.reports().join(format!("{name}.json"));
    let txt = layout.reports().join(format!("{name}.txt"));
    write_file(&json, report.to_json())?;
    write_file(&txt, report.to_string())?;
    m.add_artifact(layout, &json)?;
    m.add_artifact(layout, &txt)
}

fn evaluate(cfg: &RunConfig, layout: &Layout) -> Result<RunOutcome, ExperimentError> {
    let split: SplitFile = read_json(&layout.split(), Command::Prepare)?;
    let models = load_dbres(layout)?;
    let fusion = match load_fusion_model(&layout.model("fusion")) {
        Ok((model, _)) => Some(model),
        Err(e) => {
            warn!("skipping fused evaluation: {e}");
            None
        }
    };
    let imputer: Imputer = read_json(&layout.imputer(), Command::Prepare)?;
    let table: SignalFeatureTable = read_json(&layout.features_json(), Command::Prepare)?;
    let patients = load_patients(&cfg.data_dir)?;
    let index = by_id(&patients);
    let cache = open_cache(cfg, layout)?;

    let mut dbres_pairs = Vec::new();
    let mut fused_pairs = Vec::new();
    let mut dbres_csv = format!("{PREDICTION_HEADER}\n");
    let mut fused_csv = format!("{PREDICTION_HEADER}{FUSED_HEADER_SUFFIX}\n");
    for p in select(&index, &split.heldout)? {
        let truth = split.labels[&p.patient_id];
        let specs = cached_patient_segments(&cache, p)?;
        let pred = dbres_predict(cfg, &models, &p.patient_id, &specs)?;
        dbres_pairs.push((truth, pred.label));
        dbres_csv.push_str(&prediction_row(&p.patient_id, &pred));
        dbres_csv.push('\n');
        if let Some(f) = &fusion {
            let v = fusion_vector(&pred, p, &imputer, &patient_features(&table, &p.patient_id)?)?;
            let (label, probs) = classify_patient_fused(f, &v)?;
            fused_pairs.push((truth, label));
            fused_csv.push_str(&fused_row(&p.patient_id, &pred, label, probs));
            fused_csv.push('\n');
        }
    }

    let mut m = CommandManifest::new(Command::Evaluate, cfg);
    for path in [layout.split(), layout.imputer(), layout.features_json()] {
        m.add_input(&path)?;
    }
    let dbres = score_report(&dbres_pairs)?;
    write_report(layout, "dbres", &dbres, &mut m)?;
    let dbres_path = layout.predictions().join("heldout_dbres.csv");
    write_file(&dbres_path, &dbres_csv)?;
    m.add_artifact(layout, &dbres_path)?;

    let train_labels: Vec<MurmurLabel> = split.train().iter().map(|id| split.labels[id]).collect();
    let heldout_labels: Vec<MurmurLabel> = dbres_pairs.iter().map(|(t, _)| *t).collect();
    let (majority, baseline) = majority_baseline(&train_labels, &heldout_labels)?;
    write_report(layout, "baseline", &baseline, &mut m)?;

    let mut summary = format!(
        "held-out patients: {}\nDBRes: weighted accuracy {:.3}, accuracy {:.3}\nmajority baseline ({majority}): weighted accuracy {:.3}, accuracy {:.3}\n",
        dbres.n_patients, dbres.weighted_accuracy, dbres.accuracy, baseline.weighted_accuracy, baseline.accuracy
    );
    m.summary.insert("dbres_weighted_accuracy".into(), dbres.weighted_accuracy.into());
    m.summary.insert("dbres_accuracy".into(), dbres.accuracy.into());
    m.summary.insert("baseline_weighted_accuracy".into(), baseline.weighted_accuracy.into());
    if fusion.is_some() {
        let fused = score_report(&fused_pairs)?;
        write_report(layout, "fusion", &fused, &mut m)?;
        let path = layout.predictions().join("heldout_fusion.csv");
        write_file(&path, &fused_csv)?;
        m.add_artifact(layout, &path)?;
        m.summary.insert("fusion_weighted_accuracy".into(), fused.weighted_accuracy.into());
        m.summary.insert("fusion_accuracy".into(), fused.accuracy.into());
        let _ = writeln!(summary, "fusion: weighted accuracy {:.3}, accuracy {:.3}", fused.weighted_accuracy, fused.accuracy);
    }
    Ok(RunOutcome { command: Command::Evaluate, manifest: m.write(layout)?, summary })
}

fn predict(cfg: &RunConfig, layout: &Layout) -> Result<RunOutcome, ExperimentError> {
    let dir = cfg.predict_dir.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let models = load_dbres(layout)?;
    let fusion: Option<FusionModel> = load_fusion_model(&layout.model("fusion")).ok().map(|(m, _)| m);
    let imputer: Option<Imputer> = fs::read_to_string(layout.imputer()).ok().and_then(|t| serde_json::from_str(&t).ok());
    let patients = load_patients(&dir)?;
    if patients.is_empty() {
        return Err(ExperimentError::Data(format!("no patients in {}", dir.display())));
    }
    let mut m = CommandManifest::new(Command::Predict, cfg);
    let mut dbres_csv = format!("{PREDICTION_HEADER}\n");
    let mut fused_csv = format!("{PREDICTION_HEADER}{FUSED_HEADER_SUFFIX}\n");
    let use_fusion = match (&fusion, &imputer) {
        (Some(_), Some(_)) => true,
        (Some(_), None) => {
            warn!("fusion model present but imputer.json missing; writing DBRes predictions only");
            false
        }
        _ => false,
    };
    for p in &patients {
        m.add_input(&dir.join(format!("{}.txt", p.patient_id)))?;
        let mut signals = Vec::with_capacity(p.recordings.len());
        for r in &p.recordings {
            m.add_input(Path::new(&r.audio_path))?;
            signals.push(load_recording(r)?);
        }
        let specs = match patient_spectrograms(&p.patient_id, &signals, &cfg.segmentation, &cfg.spectrogram) {
            Ok(s) => s,
            Err(DspError::TooShort { .. }) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let pred = dbres_predict(cfg, &models, &p.patient_id, &specs)?;
        dbres_csv.push_str(&prediction_row(&p.patient_id, &pred));
        dbres_csv.push('\n');
        if use_fusion {
            let feats = signals
                .iter()
                .map(|s| extract_signal_features_with(s, &cfg.spectrogram))
                .collect::<Result<Vec<_>, _>>()?;
            let v = fusion_vector(&pred, p, imputer.as_ref().expect("checked"), &feats)?;
            let (label, probs) = classify_patient_fused(fusion.as_ref().expect("checked"), &v)?;
            fused_csv.push_str(&fused_row(&p.patient_id, &pred, label, probs));
            fused_csv.push('\n');
        }
    }
    let path = layout.predictions().join("predict_dbres.csv");
    write_file(&path, &dbres_csv)?;
    m.add_artifact(layout, &path)?;
    if use_fusion {
        let path = layout.predictions().join("predict_fusion.csv");
        write_file(&path, &fused_csv)?;
        m.add_artifact(layout, &path)?;
    }
    let summary = format!("predictions for {} patients from {}", patients.len(), dir.display());
    Ok(RunOutcome { command: Command::Predict, manifest: m.write(layout)?, summary })
}

fn stats(cfg: &RunConfig, layout: &Layout) -> Result<RunOutcome, ExperimentError> {
    let patients = load_patients(&cfg.data_dir)?;
    if patients.is_empty() {
        return Err(ExperimentError::Data(format!("no patients in {}", cfg.data_dir.display())));
    }
    let report = dataset_stats(&patients);
    report.write(&layout.stats(), cfg.write_plots)?;
    let mut m = CommandManifest::new(Command::Stats, cfg);
    for p in &patients {
        m.add_input(&cfg.data_dir.join(format!("{}.txt", p.patient_id)))?;
    }
    m.add_artifact(layout, &layout.stats())?;
    let sum = report.row("Sum").expect("sum row");
    let summary = format!(
        "{} patients: {} Absent, {} Unknown, {} Present, {} unlabeled",
        report.n_patients,
        sum.counts[MurmurLabel::Absent.index()],
        sum.counts[MurmurLabel::Unknown.index()],
        sum.counts[MurmurLabel::Present.index()],
        report.unlabeled
    );
    Ok(RunOutcome { command: Command::Stats, manifest: m.write(layout)?, summary })
}

/// Runs one command with the configuration resolved (seeds derived, pretrained
/// flags applied) and validated.
pub fn run_experiment(command: Command, cfg: &RunConfig) -> Result<RunOutcome, ExperimentError> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| ExperimentError::Config(format!("output_dir {} is not writable: {e}", cfg.output_dir.display())))?;
    if !cfg.data_dir.is_dir() && command != Command::Predict {
        return Err(ExperimentError::Data(format!("data_dir {} does not exist", cfg.data_dir.display())));
    }
    let layout = Layout::new(&cfg.output_dir);
    match command {
        Command::Prepare => prepare(&cfg, &layout),
        Command::TrainDbres => train_dbres(&cfg, &layout),
        Command::TrainFusion => train_fusion(&cfg, &layout),
        Command::Evaluate => evaluate(&cfg, &layout),
        Command::Predict => predict(&cfg, &layout),
        Command::Stats => stats(&cfg, &layout),
    }
}
