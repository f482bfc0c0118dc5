use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Patient-level murmur label.
///
/// The declaration order (Present, Unknown, Absent) is the canonical order used
/// for confusion matrices, probability triples and argmax tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MurmurLabel {
    Present,
    Unknown,
    Absent,
}

impl MurmurLabel {
    pub const ALL: [MurmurLabel; 3] = [MurmurLabel::Present, MurmurLabel::Unknown, MurmurLabel::Absent];

    /// Position in the canonical (Present, Unknown, Absent) order.
    pub fn index(self) -> usize {
        match self {
            MurmurLabel::Present => 0,
            MurmurLabel::Unknown => 1,
            MurmurLabel::Absent => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MurmurLabel::Present => "Present",
            MurmurLabel::Unknown => "Unknown",
            MurmurLabel::Absent => "Absent",
        }
    }
}

impl fmt::Display for MurmurLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognised murmur label {0:?}")]
pub struct ParseLabelError(pub String);

impl FromStr for MurmurLabel {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Present" => Ok(MurmurLabel::Present),
            "Unknown" => Ok(MurmurLabel::Unknown),
            "Absent" => Ok(MurmurLabel::Absent),
            other => Err(ParseLabelError(other.to_string())),
        }
    }
}
