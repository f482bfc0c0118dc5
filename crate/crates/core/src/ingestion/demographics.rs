use bitflags::bitflags;
use serde::{Deserialize, Serialize};

use super::{AgeCategory, IngestError, PatientRecord, Sex};

/// Approximate age in months for each category; `Missing` is imputed instead.
pub const AGE_MONTHS: [(AgeCategory, f64); 5] = [
    (AgeCategory::Neonate, 0.5),
    (AgeCategory::Infant, 6.0),
    (AgeCategory::Child, 72.0),
    (AgeCategory::Adolescent, 180.0),
    (AgeCategory::YoungAdult, 240.0),
];

fn age_months(category: AgeCategory) -> Option<f64> {
    AGE_MONTHS.iter().find(|(c, _)| *c == category).map(|(_, m)| *m)
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
    pub struct ImputedFields: u8 {
        const AGE = 1;
        const HEIGHT = 1 << 1;
        const WEIGHT = 1 << 2;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicVector {
    pub age_months: f64,
    pub sex_female: f64,
    pub sex_male: f64,
    pub height_cm: f64,
    pub weight_kg: f64,
    pub pregnant: f64,
    pub imputed_mask: ImputedFields,
}

impl DemographicVector {
    pub const NAMES: [&'static str; 6] = ["age_months", "sex_female", "sex_male", "height_cm", "weight_kg", "pregnant"];

    pub fn to_array(&self) -> [f64; 6] {
        [self.age_months, self.sex_female, self.sex_male, self.height_cm, self.weight_kg, self.pregnant]
    }
}

/// Per-field means fitted on the training split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub age_months: Option<f64>,
    pub height_cm: Option<f64>,
    pub weight_kg: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Imputer {
    pub fn fit(train: &[PatientRecord]) -> Self {
        Self {
            age_months: mean(train.iter().filter_map(|p| age_months(p.age_category))),
            height_cm: mean(train.iter().filter_map(|p| p.height_cm)),
            weight_kg: mean(train.iter().filter_map(|p| p.weight_kg)),
        }
    }
}

/// Encodes demographics: age category to months, one-hot sex (all-zero when
/// missing), pregnancy to 0/1 (missing counts as not pregnant), and missing
/// numeric fields replaced by the imputer's training means.
pub fn encode_demographics(rec: &PatientRecord, imputer: &Imputer) -> Result<DemographicVector, IngestError> {
    let mut mask = ImputedFields::empty();
    let mut fill = |value: Option<f64>, mean: Option<f64>, flag: ImputedFields, name: &'static str| match value {
        Some(v) => Ok(v),
        None => {
            mask |= flag;
            mean.ok_or(IngestError::ImputerNotFitted(name))
        }
    };
    let age = fill(age_months(rec.age_category), imputer.age_months, ImputedFields::AGE, "age_months")?;
    let height = fill(rec.height_cm, imputer.height_cm, ImputedFields::HEIGHT, "height_cm")?;
    let weight = fill(rec.weight_kg, imputer.weight_kg, ImputedFields::WEIGHT, "weight_kg")?;
    let (female, male) = match rec.sex {
        Sex::Female => (1.0, 0.0),
        Sex::Male => (0.0, 1.0),
        Sex::Missing => (0.0, 0.0),
    };
    Ok(DemographicVector {
        age_months: age,
        sex_female: female,
        sex_male: male,
        height_cm: height,
        weight_kg: weight,
        pregnant: if rec.pregnant == Some(true) { 1.0 } else { 0.0 },
        imputed_mask: mask,
    })
}
