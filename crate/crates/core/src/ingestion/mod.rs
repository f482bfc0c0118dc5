//! Patient metadata and audio ingestion, demographic encoding, stratified
//! splitting and dataset statistics.

mod audio;
mod demographics;
mod metadata;
mod split;
mod stats;

use std::path::PathBuf;

pub use audio::{load_recording, probe_duration, write_wav, AudioSignal};
pub use demographics::{encode_demographics, DemographicVector, ImputedFields, Imputer, AGE_MONTHS};
pub use metadata::{
    load_patient, load_patients, parse_patient_metadata, render_patient_metadata, AgeCategory, Location,
    PatientRecord, RecordingRef, Sex,
};
pub use split::{split_dataset, Split};
pub use stats::{dataset_stats, LengthHistogram, StatsReport, StatsRow};

use crate::label::MurmurLabel;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed metadata header: {0}")]
    MalformedHeader(String),
    #[error("malformed recording line {line:?}")]
    MalformedRecordingLine { line: String },
    #[error("unknown murmur label {0:?}")]
    UnknownLabel(String),
    #[error("invalid value {value:?} for field {field}")]
    InvalidValue { field: &'static str, value: String },
    #[error("header declares {declared} recordings but {listed} are listed")]
    RecordingCountMismatch { declared: usize, listed: usize },
    #[error("patient declares {0} recordings, expected between 1 and 6")]
    RecordingCountOutOfRange(usize),
    #[error("unsupported audio encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("audio file {0} contains no samples")]
    EmptyAudio(PathBuf),
    #[error("imputer has no training mean for {0}")]
    ImputerNotFitted(&'static str),
    #[error("murmur class {label} has {count} patients, at least 2 are needed to stratify")]
    DegenerateClass { label: MurmurLabel, count: usize },
    #[error("held-out fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("patient {0} has no murmur label")]
    MissingLabel(String),
    #[error("no metadata files found in {0}")]
    NoPatients(PathBuf),
    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
