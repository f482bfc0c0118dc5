//! Challenge scoring: class-weighted murmur accuracy, plain accuracy and
//! per-class accuracies over a 3x3 confusion matrix.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::label::MurmurLabel;

/// Weights for correct Present, Unknown and Absent classifications.
pub const CHALLENGE_WEIGHTS: [u64; 3] = [5, 3, 1];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ScoringError {
    #[error("label {0:?} is not one of Present, Unknown, Absent")]
    UnknownLabelValue(String),
    #[error("no patients to score")]
    EmptyEvaluation,
}

/// Rows are true labels, columns predictions, both in (Present, Unknown, Absent) order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (MurmurLabel, MurmurLabel)>,
    {
        let mut cm = Self::default();
        for (t, p) in pairs {
            cm.counts[t.index()][p.index()] += 1;
        }
        cm
    }

    pub fn correct(&self, label: MurmurLabel) -> u64 {
        self.counts[label.index()][label.index()]
    }

    pub fn class_total(&self, label: MurmurLabel) -> u64 {
        self.counts[label.index()].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// Numerator and denominator of the class-weighted accuracy under `weights`.
    pub fn weighted_ratio(&self, weights: [u64; 3]) -> (u64, u64) {
        MurmurLabel::ALL.iter().fold((0, 0), |(num, den), &l| {
            let w = weights[l.index()];
            (num + w * self.correct(l), den + w * self.class_total(l))
        })
    }
}

/// Tallies string label pairs, rejecting anything outside the three labels.
pub fn tally_confusion<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<ConfusionMatrix, ScoringError> {
    let parse = |s: &S| {
        s.as_ref().parse::<MurmurLabel>().map_err(|_| ScoringError::UnknownLabelValue(s.as_ref().to_string()))
    };
    let mut cm = ConfusionMatrix::default();
    for (t, p) in pairs {
        cm.counts[parse(t)?.index()][parse(p)?.index()] += 1;
    }
    Ok(cm)
}

/// Class-weighted accuracy with arbitrary integer weights; `(1, 1, 1)` is plain accuracy.
pub fn weighted_accuracy_with(cm: &ConfusionMatrix, weights: [u64; 3]) -> Result<f64, ScoringError> {
    let (num, den) = cm.weighted_ratio(weights);
    if den == 0 {
        return Err(ScoringError::EmptyEvaluation);
    }
    Ok(num as f64 / den as f64)
}

/// `(5 c_p + 3 c_u + c_a) / (5 t_p + 3 t_u + t_a)`.
pub fn weighted_accuracy(cm: &ConfusionMatrix) -> Result<f64, ScoringError> {
    weighted_accuracy_with(cm, CHALLENGE_WEIGHTS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub weighted_accuracy: f64,
    pub accuracy: f64,
    /// `None` when the class has no patients.
    pub per_class: [Option<f64>; 3],
    pub confusion: ConfusionMatrix,
    pub n_patients: u64,
}

pub fn score_report(pairs: &[(MurmurLabel, MurmurLabel)]) -> Result<ScoreReport, ScoringError> {
    score_confusion(ConfusionMatrix::from_pairs(pairs.iter().copied()))
}

pub fn score_confusion(cm: ConfusionMatrix) -> Result<ScoreReport, ScoringError> {
    if cm.total() == 0 {
        return Err(ScoringError::EmptyEvaluation);
    }
    let per_class = MurmurLabel::ALL.map(|l| {
        let t = cm.class_total(l);
        (t > 0).then(|| cm.correct(l) as f64 / t as f64)
    });
    Ok(ScoreReport {
        weighted_accuracy: weighted_accuracy(&cm)?,
        accuracy: cm.trace() as f64 / cm.total() as f64,
        per_class,
        confusion: cm,
        n_patients: cm.total(),
    })
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

#[derive(Serialize)]
struct ReportFile {
    weighted_accuracy: f64,
    accuracy: f64,
    per_class_present: Option<f64>,
    per_class_unknown: Option<f64>,
    per_class_absent: Option<f64>,
    n_patients: u64,
    confusion: [[u64; 3]; 3],
}

impl ScoreReport {
    /// Machine-readable form, values rounded to three decimals; empty classes are `null`.
    pub fn to_json(&self) -> String {
        let file = ReportFile {
            weighted_accuracy: round3(self.weighted_accuracy),
            accuracy: round3(self.accuracy),
            per_class_present: self.per_class[0].map(round3),
            per_class_unknown: self.per_class[1].map(round3),
            per_class_absent: self.per_class[2].map(round3),
            n_patients: self.n_patients,
            confusion: self.confusion.counts,
        };
        serde_json::to_string_pretty(&file).expect("report serialises") + "\n"
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
        writeln!(f, "patients            {}", self.n_patients)?;
        writeln!(f, "accuracy            {:.3}", self.accuracy)?;
        writeln!(f, "weighted accuracy   {:.3}", self.weighted_accuracy)?;
        for l in MurmurLabel::ALL {
            writeln!(f, "  {:<8} accuracy {}", l.as_str(), cell(self.per_class[l.index()]))?;
        }
        writeln!(f, "confusion (rows true, cols predicted; Present Unknown Absent)")?;
        for row in &self.confusion.counts {
            writeln!(f, "  {:>5} {:>5} {:>5}", row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use MurmurLabel::*;

    /// c = (3, 1, 10), t = (5, 2, 20)
    fn fixture() -> ConfusionMatrix {
        ConfusionMatrix { counts: [[3, 1, 1], [0, 1, 1], [4, 6, 10]] }
    }

    #[test]
    fn tally_direct() {
        let cm = tally_confusion(&[("Present", "Present"), ("Absent", "Absent"), ("Unknown", "Present")]).unwrap();
        assert_eq!((cm.counts[0][0], cm.counts[1][1], cm.counts[2][2]), (1, 0, 1));
        assert_eq!(cm.counts[1][0], 1);
        assert_eq!(tally_confusion::<&str>(&[]).unwrap(), ConfusionMatrix::default());
        assert_eq!(
            tally_confusion(&[("Maybe", "Present")]),
            Err(ScoringError::UnknownLabelValue("Maybe".into()))
        );
    }

    #[test]
    fn fixture_is_28_over_51() {
        assert_eq!(fixture().weighted_ratio(CHALLENGE_WEIGHTS), (28, 51));
        assert_eq!(weighted_accuracy(&fixture()).unwrap(), 28.0 / 51.0);
        let r = score_confusion(fixture()).unwrap();
        assert_eq!(r.accuracy, 14.0 / 27.0);
        assert_eq!(r.per_class, [Some(0.6), Some(0.5), Some(0.5)]);
    }

    #[test]
    fn all_right_all_wrong() {
        let right = ConfusionMatrix::from_pairs([(Present, Present), (Unknown, Unknown), (Absent, Absent)]);
        assert_eq!(weighted_accuracy(&right).unwrap(), 1.0);
        let r = score_confusion(right).unwrap();
        assert_eq!((r.accuracy, r.per_class), (1.0, [Some(1.0); 3]));
        let wrong = ConfusionMatrix::from_pairs([(Present, Absent), (Unknown, Present), (Absent, Unknown)]);
        assert_eq!(weighted_accuracy(&wrong).unwrap(), 0.0);
    }

    #[test]
    fn empty_class_is_undefined_not_zero() {
        let r = score_report(&[(Present, Present), (Absent, Present)]).unwrap();
        assert_eq!(r.per_class[1], None);
        assert_eq!(r.weighted_accuracy, 5.0 / 6.0);
        assert!(r.to_json().contains("\"per_class_unknown\": null"));
        assert!(r.to_string().contains("n/a"));
    }

    #[test]
    fn empty_evaluation() {
        assert_eq!(weighted_accuracy(&ConfusionMatrix::default()), Err(ScoringError::EmptyEvaluation));
        assert_eq!(score_report(&[]), Err(ScoringError::EmptyEvaluation));
    }

    #[test]
    fn unit_weights_give_accuracy() {
        let cm = fixture();
        assert_eq!(weighted_accuracy_with(&cm, [1, 1, 1]).unwrap(), score_confusion(cm).unwrap().accuracy);
    }

    #[test]
    fn one_more_correct_adds_the_class_weight() {
        let base = fixture();
        let (num, den) = base.weighted_ratio(CHALLENGE_WEIGHTS);
        for (label, w) in [(Present, 5), (Unknown, 3), (Absent, 1)] {
            let mut cm = base;
            // move one misclassified patient of this class onto the diagonal
            let i = label.index();
            let j = (0..3).find(|&j| j != i && cm.counts[i][j] > 0).unwrap();
            cm.counts[i][j] -= 1;
            cm.counts[i][i] += 1;
            assert_eq!(cm.weighted_ratio(CHALLENGE_WEIGHTS), (num + w, den));
        }
    }
}
