use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{IngestError, PatientRecord};
use crate::label::MurmurLabel;

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<PatientRecord>,
    pub heldout: Vec<PatientRecord>,
}

impl Split {
    pub fn train_ids(&self) -> Vec<String> {
        self.train.iter().map(|p| p.patient_id.clone()).collect()
    }

    pub fn heldout_ids(&self) -> Vec<String> {
        self.heldout.iter().map(|p| p.patient_id.clone()).collect()
    }
}

/// Patient-level split stratified by murmur label.
///
/// Each class contributes `round(n * heldout_fraction)` patients to the
/// held-out side, clamped to `[1, n - 1]` so both sides see every class. The
/// result depends only on the set of patients and the seed, not on input order.
pub fn split_dataset(patients: &[PatientRecord], heldout_fraction: f64, seed: u64) -> Result<Split, IngestError> {
    if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
        return Err(IngestError::InvalidFraction(heldout_fraction));
    }
    let mut by_class: BTreeMap<MurmurLabel, Vec<&PatientRecord>> =
        MurmurLabel::ALL.iter().map(|&l| (l, Vec::new())).collect();
    for p in patients {
        by_class.entry(p.label()?).or_default().push(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split { train: Vec::new(), heldout: Vec::new() };
    for (label, mut members) in by_class {
        if members.len() < 2 {
            return Err(IngestError::DegenerateClass { label, count: members.len() });
        }
        members.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        members.shuffle(&mut rng);
        let n = members.len();
        let take = ((n as f64 * heldout_fraction).round() as usize).clamp(1, n - 1);
        split.heldout.extend(members[..take].iter().map(|p| (*p).clone()));
        split.train.extend(members[take..].iter().map(|p| (*p).clone()));
    }
    split.train.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    split.heldout.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(split)
}
