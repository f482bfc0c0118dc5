use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{DspError, SegmentationConfig, Spectrogram, SpectrogramConfig, SpectrogramSource};

const INDEX_FILE: &str = "index.csv";
const INDEX_HEADER: &str = "patient_id,recording_index,start_s,file,offset_bytes,n_mels,n_frames";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpectrogramKey {
    pub patient_id: String,
    pub recording_index: usize,
}

#[derive(Debug, Clone)]
struct IndexEntry {
    start_s: f64,
    file: String,
    offset: u64,
    n_mels: usize,
    n_frames: usize,
}

/// On-disk spectrogram store: one little-endian f32 file per recording
/// (segments back to back, each row-major `[n_mels, n_frames]`) plus an
/// `index.csv` locating every segment. The directory name is a hash of the
/// segmentation and spectrogram configuration.
#[derive(Debug)]
pub struct SpectrogramCache {
    dir: PathBuf,
    index: BTreeMap<SpectrogramKey, Vec<IndexEntry>>,
}

#[derive(Serialize)]
struct CacheConfig<'a> {
    segmentation: &'a SegmentationConfig,
    spectrogram: &'a SpectrogramConfig,
}

pub fn config_hash(seg: &SegmentationConfig, spec: &SpectrogramConfig) -> String {
    let json = serde_json::to_string(&CacheConfig { segmentation: seg, spectrogram: spec }).expect("configs serialise");
    hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
}

impl SpectrogramCache {
    pub fn open(base: &Path, seg: &SegmentationConfig, spec: &SpectrogramConfig) -> Result<Self, DspError> {
        let dir = base.join(config_hash(seg, spec));
        let err = |detail: String| DspError::Cache { path: dir.clone(), detail };
        fs::create_dir_all(&dir).map_err(|e| err(e.to_string()))?;
        let cfg_path = dir.join("config.json");
        if !cfg_path.exists() {
            let json = serde_json::to_string_pretty(&CacheConfig { segmentation: seg, spectrogram: spec })
                .map_err(|e| err(e.to_string()))?;
            fs::write(&cfg_path, json).map_err(|e| err(e.to_string()))?;
        }
        let mut index: BTreeMap<SpectrogramKey, Vec<IndexEntry>> = BTreeMap::new();
        if let Ok(text) = fs::read_to_string(dir.join(INDEX_FILE)) {
            for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
                let f: Vec<&str> = line.split(',').collect();
                let parsed = (|| {
                    Some((
                        SpectrogramKey { patient_id: f.first()?.to_string(), recording_index: f.get(1)?.parse().ok()? },
                        IndexEntry {
                            start_s: f.get(2)?.parse().ok()?,
                            file: f.get(3)?.to_string(),
                            offset: f.get(4)?.parse().ok()?,
                            n_mels: f.get(5)?.parse().ok()?,
                            n_frames: f.get(6)?.parse().ok()?,
                        },
                    ))
                })();
                let (key, entry) = parsed.ok_or_else(|| err(format!("bad index line {line:?}")))?;
                index.entry(key).or_default().push(entry);
            }
        }
        Ok(Self { dir, index })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn contains(&self, key: &SpectrogramKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn get(&self, key: &SpectrogramKey) -> Result<Option<Vec<Spectrogram>>, DspError> {
        let Some(entries) = self.index.get(key) else { return Ok(None) };
        let mut out = Vec::with_capacity(entries.len());
        let mut loaded: Option<(String, Vec<u8>)> = None;
        for e in entries {
            if loaded.as_ref().is_none_or(|(name, _)| *name != e.file) {
                let path = self.dir.join(&e.file);
                let bytes =
                    fs::read(&path).map_err(|err| DspError::Cache { path: path.clone(), detail: err.to_string() })?;
                loaded = Some((e.file.clone(), bytes));
            }
            let bytes = &loaded.as_ref().expect("loaded above").1;
            let n = e.n_mels * e.n_frames;
            let start = e.offset as usize;
            let end = start + 4 * n;
            if end > bytes.len() {
                return Err(DspError::Cache { path: self.dir.join(&e.file), detail: "truncated array file".into() });
            }
            let values: Vec<f32> =
                bytes[start..end].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            out.push(Spectrogram {
                values: Array2::from_shape_vec((e.n_mels, e.n_frames), values).expect("shape checked"),
                source: SpectrogramSource {
                    patient_id: key.patient_id.clone(),
                    recording_index: key.recording_index,
                    start_s: e.start_s,
                },
            });
        }
        Ok(Some(out))
    }

    /// Number of cached segments of a recording, if present.
    pub fn segment_count(&self, key: &SpectrogramKey) -> Option<usize> {
        self.index.get(key).map(Vec::len)
    }

    /// Reads a single segment without loading the rest of the recording.
    pub fn get_segment(&self, key: &SpectrogramKey, segment: usize) -> Result<Option<Spectrogram>, DspError> {
        let Some(e) = self.index.get(key).and_then(|v| v.get(segment)) else { return Ok(None) };
        let path = self.dir.join(&e.file);
        let err = |detail: String| DspError::Cache { path: path.clone(), detail };
        let mut f = fs::File::open(&path).map_err(|x| err(x.to_string()))?;
        f.seek(SeekFrom::Start(e.offset)).map_err(|x| err(x.to_string()))?;
        let mut bytes = vec![0u8; 4 * e.n_mels * e.n_frames];
        f.read_exact(&mut bytes).map_err(|x| err(x.to_string()))?;
        let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Some(Spectrogram {
            values: Array2::from_shape_vec((e.n_mels, e.n_frames), values).expect("shape from index"),
            source: SpectrogramSource {
                patient_id: key.patient_id.clone(),
                recording_index: key.recording_index,
                start_s: e.start_s,
            },
        }))
    }

    /// Stores all segments of one recording, replacing earlier entries.
    pub fn put(&mut self, key: SpectrogramKey, specs: &[Spectrogram]) -> Result<(), DspError> {
        let file = format!("{}_{}.f32", key.patient_id, key.recording_index);
        let path = self.dir.join(&file);
        let mut bytes = Vec::new();
        let mut entries = Vec::with_capacity(specs.len());
        for s in specs {
            entries.push(IndexEntry {
                start_s: s.source.start_s,
                file: file.clone(),
                offset: bytes.len() as u64,
                n_mels: s.n_mels(),
                n_frames: s.n_frames(),
            });
            for v in s.values.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(&path, bytes).map_err(|e| DspError::Cache { path: path.clone(), detail: e.to_string() })?;
        self.index.insert(key, entries);
        Ok(())
    }

    /// Rewrites `index.csv` from the in-memory index.
    pub fn flush(&self) -> Result<(), DspError> {
        let mut out = String::from(INDEX_HEADER);
        out.push('\n');
        for (k, entries) in &self.index {
            for e in entries {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    k.patient_id, k.recording_index, e.start_s, e.file, e.offset, e.n_mels, e.n_frames
                ));
            }
        }
        let path = self.dir.join(INDEX_FILE);
        fs::write(&path, out).map_err(|e| DspError::Cache { path, detail: e.to_string() })
    }
}
