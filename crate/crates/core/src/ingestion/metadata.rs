use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{audio, IngestError};
use crate::label::MurmurLabel;

pub const MAX_RECORDINGS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeCategory {
    Neonate,
    Infant,
    Child,
    Adolescent,
    YoungAdult,
    Missing,
}

impl AgeCategory {
    pub const ALL: [AgeCategory; 6] = [
        AgeCategory::Neonate,
        AgeCategory::Infant,
        AgeCategory::Child,
        AgeCategory::Adolescent,
        AgeCategory::YoungAdult,
        AgeCategory::Missing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgeCategory::Neonate => "Neonate",
            AgeCategory::Infant => "Infant",
            AgeCategory::Child => "Child",
            AgeCategory::Adolescent => "Adolescent",
            AgeCategory::YoungAdult => "Young Adult",
            AgeCategory::Missing => "Missing",
        }
    }

    fn parse(value: &str) -> Result<Self, IngestError> {
        Ok(match value {
            "Neonate" => AgeCategory::Neonate,
            "Infant" => AgeCategory::Infant,
            "Child" => AgeCategory::Child,
            "Adolescent" => AgeCategory::Adolescent,
            "Young Adult" | "YoungAdult" => AgeCategory::YoungAdult,
            v if is_missing(v) => AgeCategory::Missing,
            v => return Err(IngestError::InvalidValue { field: "Age", value: v.to_string() }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
    Missing,
}

/// Auscultation site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Location {
    PV,
    AV,
    MV,
    TV,
    Other,
}

impl Location {
    pub fn as_str(self) -> &'static str {
        match self {
            Location::PV => "PV",
            Location::AV => "AV",
            Location::MV => "MV",
            Location::TV => "TV",
            Location::Other => "Phc",
        }
    }

    fn parse(token: &str) -> Option<Self> {
        Some(match token {
            "PV" => Location::PV,
            "AV" => Location::AV,
            "MV" => Location::MV,
            "TV" => Location::TV,
            "Phc" | "Other" => Location::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingRef {
    pub location: Location,
    pub header_file: String,
    pub audio_path: String,
    pub sample_rate_hz: u32,
    /// Unknown until the audio (or its `.hea` header) has been probed.
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub sample_rate_hz: u32,
    pub age_category: AgeCategory,
    pub sex: Sex,
    pub height_cm: Option<f64>,
    pub weight_kg: Option<f64>,
    pub pregnant: Option<bool>,
    /// `None` only for unlabeled (prediction-time) patients.
    pub murmur_label: Option<MurmurLabel>,
    pub recordings: Vec<RecordingRef>,
}

impl PatientRecord {
    pub fn label(&self) -> Result<MurmurLabel, IngestError> {
        self.murmur_label.ok_or_else(|| IngestError::MissingLabel(self.patient_id.clone()))
    }
}

fn is_missing(value: &str) -> bool {
    value.is_empty() || value.eq_ignore_ascii_case("nan")
}

fn parse_optional_f64(field: &'static str, value: &str) -> Result<Option<f64>, IngestError> {
    if is_missing(value) {
        return Ok(None);
    }
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(IngestError::InvalidValue { field, value: value.to_string() }),
    }
}

fn parse_optional_bool(field: &'static str, value: &str) -> Result<Option<bool>, IngestError> {
    match value {
        v if is_missing(v) => Ok(None),
        "True" | "true" => Ok(Some(true)),
        "False" | "false" => Ok(Some(false)),
        v => Err(IngestError::InvalidValue { field, value: v.to_string() }),
    }
}

/// Parses one patient metadata file.
///
/// Line 1 is `<patient_id> <num_recordings> <sample_rate_hz>`, followed by one
/// `<location> <header_file> <audio_file> [...]` line per recording and then
/// `#<Key>: <Value>` comment lines. Unknown keys are ignored.
pub fn parse_patient_metadata(text: &str) -> Result<PatientRecord, IngestError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| IngestError::MalformedHeader(String::new()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let malformed = || IngestError::MalformedHeader(header.to_string());
    if fields.len() < 3 {
        return Err(malformed());
    }
    let patient_id = fields[0].to_string();
    let declared: usize = fields[1].parse().map_err(|_| malformed())?;
    let sample_rate_hz: u32 = fields[2].parse().map_err(|_| malformed())?;
    if sample_rate_hz == 0 {
        return Err(malformed());
    }

    let mut record = PatientRecord {
        patient_id,
        sample_rate_hz,
        age_category: AgeCategory::Missing,
        sex: Sex::Missing,
        height_cm: None,
        weight_kg: None,
        pregnant: None,
        murmur_label: None,
        recordings: Vec::with_capacity(declared.min(MAX_RECORDINGS)),
    };

    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let Some((key, value)) = comment.split_once(':') else { continue };
            let value = value.trim();
            match key.trim() {
                "Age" => record.age_category = AgeCategory::parse(value)?,
                "Sex" => {
                    record.sex = match value {
                        "Female" => Sex::Female,
                        "Male" => Sex::Male,
                        v if is_missing(v) => Sex::Missing,
                        v => return Err(IngestError::InvalidValue { field: "Sex", value: v.to_string() }),
                    }
                }
                "Height" => record.height_cm = parse_optional_f64("Height", value)?,
                "Weight" => record.weight_kg = parse_optional_f64("Weight", value)?,
                "Pregnancy status" => record.pregnant = parse_optional_bool("Pregnancy status", value)?,
                "Murmur" => {
                    record.murmur_label = Some(
                        value.parse::<MurmurLabel>().map_err(|_| IngestError::UnknownLabel(value.to_string()))?,
                    )
                }
                _ => {}
            }
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let bad_line = || IngestError::MalformedRecordingLine { line: line.to_string() };
        if tokens.len() < 3 {
            return Err(bad_line());
        }
        let location = Location::parse(tokens[0]).ok_or_else(bad_line)?;
        record.recordings.push(RecordingRef {
            location,
            header_file: tokens[1].to_string(),
            audio_path: tokens[2].to_string(),
            sample_rate_hz,
            duration_s: None,
        });
    }

    if record.recordings.len() != declared {
        return Err(IngestError::RecordingCountMismatch { declared, listed: record.recordings.len() });
    }
    if declared == 0 || declared > MAX_RECORDINGS {
        return Err(IngestError::RecordingCountOutOfRange(declared));
    }
    Ok(record)
}

/// Writes a record back out in the metadata grammar accepted by
/// [`parse_patient_metadata`]. Missing values are written as `nan`.
pub fn render_patient_metadata(record: &PatientRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", record.patient_id, record.recordings.len(), record.sample_rate_hz);
    for rec in &record.recordings {
        let _ = writeln!(out, "{} {} {}", rec.location.as_str(), rec.header_file, rec.audio_path);
    }
    let age = match record.age_category {
        AgeCategory::Missing => "nan",
        other => other.as_str(),
    };
    let sex = match record.sex {
        Sex::Female => "Female",
        Sex::Male => "Male",
        Sex::Missing => "nan",
    };
    let num = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x}"));
    let _ = writeln!(out, "#Age: {age}");
    let _ = writeln!(out, "#Sex: {sex}");
    let _ = writeln!(out, "#Height: {}", num(record.height_cm));
    let _ = writeln!(out, "#Weight: {}", num(record.weight_kg));
    let preg = match record.pregnant {
        Some(true) => "True",
        Some(false) => "False",
        None => "nan",
    };
    let _ = writeln!(out, "#Pregnancy status: {preg}");
    if let Some(label) = record.murmur_label {
        let _ = writeln!(out, "#Murmur: {label}");
    }
    out
}

/// Reads a metadata file, resolves recording paths against its directory and
/// probes each recording's duration from the audio header, falling back to the
/// `.hea` header file. Recordings that cannot be probed keep `duration_s = None`.
pub fn load_patient(metadata_path: &Path) -> Result<PatientRecord, IngestError> {
    let text = fs::read_to_string(metadata_path)
        .map_err(|source| IngestError::Io { path: metadata_path.to_path_buf(), source })?;
    let mut record = parse_patient_metadata(&text)?;
    let dir = metadata_path.parent().unwrap_or(Path::new("."));
    for rec in &mut record.recordings {
        let audio = dir.join(&rec.audio_path);
        rec.audio_path = audio.to_string_lossy().into_owned();
        rec.duration_s = audio::probe_duration(&audio)
            .ok()
            .or_else(|| hea_duration(&dir.join(&rec.header_file)));
        if let Some(d) = rec.duration_s {
            if !(5.0..=45.0).contains(&d) {
                log::warn!("{}: recording length {d:.2} s outside the usual 5-45 s range", rec.audio_path);
            }
        }
    }
    Ok(record)
}

/// Duration from a WFDB-style header whose first line is
/// `<record> <n_signals> <fs> <n_samples>`.
fn hea_duration(path: &Path) -> Option<f64> {
    let text = fs::read_to_string(path).ok()?;
    let first = text.lines().next()?;
    let fields: Vec<&str> = first.split_whitespace().collect();
    let fs: f64 = fields.get(2)?.split('/').next()?.parse().ok()?;
    let n: f64 = fields.get(3)?.parse().ok()?;
    (fs > 0.0 && n > 0.0).then_some(n / fs)
}

/// Loads every `*.txt` metadata file in `dir`, sorted by patient id.
pub fn load_patients(dir: &Path) -> Result<Vec<PatientRecord>, IngestError> {
    let entries = fs::read_dir(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(IngestError::NoPatients(dir.to_path_buf()));
    }
    let mut patients = paths.iter().map(|p| load_patient(p)).collect::<Result<Vec<_>, _>>()?;
    patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(patients)
}
