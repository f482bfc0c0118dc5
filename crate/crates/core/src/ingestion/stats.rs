use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use super::{AgeCategory, IngestError, PatientRecord};
use crate::label::MurmurLabel;

/// Table columns, left to right.
const COLUMN_ORDER: [MurmurLabel; 3] = [MurmurLabel::Absent, MurmurLabel::Unknown, MurmurLabel::Present];

pub const HIST_MIN_S: f64 = 5.0;
pub const HIST_MAX_S: f64 = 45.0;
pub const HIST_BIN_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub name: String,
    /// Indexed by [`MurmurLabel::index`].
    pub counts: [usize; 3],
}

impl StatsRow {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthHistogram {
    pub bin_edges_s: Vec<f64>,
    /// `counts[bin][label.index()]`
    pub counts: Vec<[usize; 3]>,
    pub below_range: [usize; 3],
    pub above_range: [usize; 3],
    /// Recordings whose length could not be determined.
    pub unknown_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    /// One row per age category followed by the `Sum` row.
    pub rows: Vec<StatsRow>,
    pub n_patients: usize,
    pub unlabeled: usize,
    pub histogram: LengthHistogram,
}

/// `100 * count / total` in tenths of a percent: rounded half-up to
/// hundredths first, then to tenths (so 52.547 becomes 52.55, then 52.6).
/// Integer arithmetic, so no value lands on the wrong side of a half.
fn pct_tenths(count: usize, total: usize) -> u64 {
    if total == 0 {
        return 0;
    }
    let (c, t) = (count as u64, total as u64);
    let hundredths = (2 * 10_000 * c + t) / (2 * t);
    (hundredths + 5) / 10
}

pub fn dataset_stats(patients: &[PatientRecord]) -> StatsReport {
    let mut rows: Vec<StatsRow> =
        AgeCategory::ALL.iter().map(|c| StatsRow { name: c.as_str().to_string(), counts: [0; 3] }).collect();
    let n_bins = ((HIST_MAX_S - HIST_MIN_S) / HIST_BIN_S).round() as usize;
    let mut hist = LengthHistogram {
        bin_edges_s: (0..=n_bins).map(|i| HIST_MIN_S + i as f64 * HIST_BIN_S).collect(),
        counts: vec![[0; 3]; n_bins],
        below_range: [0; 3],
        above_range: [0; 3],
        unknown_length: 0,
    };
    let mut unlabeled = 0;
    for p in patients {
        let Some(label) = p.murmur_label else {
            unlabeled += 1;
            continue;
        };
        let row = AgeCategory::ALL.iter().position(|c| *c == p.age_category).expect("every category has a row");
        rows[row].counts[label.index()] += 1;
        for rec in &p.recordings {
            match rec.duration_s {
                None => hist.unknown_length += 1,
                Some(d) if d < HIST_MIN_S => hist.below_range[label.index()] += 1,
                Some(d) if d > HIST_MAX_S => hist.above_range[label.index()] += 1,
                Some(d) => {
                    let bin = (((d - HIST_MIN_S) / HIST_BIN_S).floor() as usize).min(n_bins - 1);
                    hist.counts[bin][label.index()] += 1;
                }
            }
        }
    }
    let mut sum = StatsRow { name: "Sum".to_string(), counts: [0; 3] };
    for r in &rows {
        for i in 0..3 {
            sum.counts[i] += r.counts[i];
        }
    }
    let n_patients = sum.total();
    rows.push(sum);
    StatsReport { rows, n_patients, unlabeled, histogram: hist }
}

impl StatsReport {
    pub fn row(&self, name: &str) -> Option<&StatsRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Percentage of all labeled patients, rounded to one decimal.
    pub fn percent(&self, count: usize) -> String {
        let tenths = pct_tenths(count, self.n_patients);
        format!("{}.{}", tenths / 10, tenths % 10)
    }

    /// Table cell in the `n (pct)` form, e.g. `695 (73.8)`.
    pub fn cell(&self, row: &str, label: Option<MurmurLabel>) -> Option<String> {
        let r = self.row(row)?;
        let n = match label {
            Some(l) => r.counts[l.index()],
            None => r.total(),
        };
        Some(format!("{n} ({})", self.percent(n)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("age_category");
        for l in COLUMN_ORDER {
            let name = l.as_str().to_lowercase();
            let _ = write!(out, ",{name}_n,{name}_pct");
        }
        out.push_str(",sum_n,sum_pct\n");
        for r in &self.rows {
            out.push_str(&r.name);
            for l in COLUMN_ORDER {
                let n = r.counts[l.index()];
                let _ = write!(out, ",{n},{}", self.percent(n));
            }
            let _ = writeln!(out, ",{},{}", r.total(), self.percent(r.total()));
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let h = &self.histogram;
        let mut out = String::from("bin_start_s,bin_end_s,present,unknown,absent\n");
        for (i, c) in h.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", h.bin_edges_s[i], h.bin_edges_s[i + 1], c[0], c[1], c[2]);
        }
        out
    }

    pub fn write(&self, dir: &Path, with_plot: bool) -> Result<(), IngestError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| IngestError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let table = dir.join("murmur_by_age.csv");
        std::fs::write(&table, self.to_csv()).map_err(io(&table))?;
        let hist = dir.join("recording_lengths.csv");
        std::fs::write(&hist, self.histogram_csv()).map_err(io(&hist))?;
        if with_plot {
            let png = dir.join("recording_lengths.png");
            self.histogram_image().save(&png).map_err(|e| IngestError::Io {
                path: png.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
        }
        Ok(())
    }

    /// Stacked bar chart of recording lengths (Absent at the bottom, then
    /// Unknown, then Present), one bar per bin.
    pub fn histogram_image(&self) -> RgbImage {
        const W: u32 = 820;
        const H: u32 = 420;
        const MARGIN: u32 = 30;
        let colours = [Rgb([213u8, 94, 0]), Rgb([240, 228, 66]), Rgb([0, 114, 178])];
        let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
        let bins = &self.histogram.counts;
        let peak = bins.iter().map(|c| c.iter().sum::<usize>()).max().unwrap_or(0).max(1);
        let plot_h = (H - 2 * MARGIN) as f64;
        let bar_w = (W - 2 * MARGIN) / bins.len().max(1) as u32;
        for (i, c) in bins.iter().enumerate() {
            let x0 = MARGIN + i as u32 * bar_w;
            let mut y = (H - MARGIN) as f64;
            for l in COLUMN_ORDER {
                let h = c[l.index()] as f64 / peak as f64 * plot_h;
                let top = (y - h).round() as u32;
                for yy in top..y.round() as u32 {
                    for xx in x0 + 1..x0 + bar_w.saturating_sub(1).max(1) {
                        img.put_pixel(xx, yy, colours[l.index()]);
                    }
                }
                y -= h;
            }
        }
        for x in MARGIN..W - MARGIN {
            img.put_pixel(x, H - MARGIN, Rgb([0, 0, 0]));
        }
        for y in MARGIN..=H - MARGIN {
            img.put_pixel(MARGIN, y, Rgb([0, 0, 0]));
        }
        img
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::parse_patient_metadata;

    #[test]
    fn empty_input_gives_zero_table() {
        let report = dataset_stats(&[]);
        assert_eq!(report.n_patients, 0);
        assert!(report.rows.iter().all(|r| r.total() == 0));
        assert_eq!(report.cell("Sum", None).unwrap(), "0 (0.0)");
        assert!(report.histogram.counts.iter().all(|c| *c == [0; 3]));
    }

    #[test]
    fn histogram_bins_by_length_and_label() {
        let mut p = parse_patient_metadata("1 2 4000\nAV a.hea a.wav\nMV b.hea b.wav\n#Age: Child\n#Murmur: Present\n")
            .unwrap();
        p.recordings[0].duration_s = Some(5.5);
        p.recordings[1].duration_s = Some(50.0);
        let report = dataset_stats(&[p]);
        assert_eq!(report.histogram.counts[0], [1, 0, 0]);
        assert_eq!(report.histogram.above_range, [1, 0, 0]);
        assert_eq!(report.row("Child").unwrap().counts, [1, 0, 0]);
        assert_eq!(report.cell("Child", Some(MurmurLabel::Present)).unwrap(), "1 (100.0)");
        let csv = report.to_csv();
        assert!(csv.starts_with("age_category,absent_n,absent_pct,unknown_n,unknown_pct,present_n,present_pct,sum_n,sum_pct\n"));
        assert!(csv.contains("\nSum,0,0.0,0,0.0,1,100.0,1,100.0\n"));
    }

    #[test]
    fn percentages_round_via_hundredths() {
        // 495/942 = 52.547..; 25/942 = 2.653..; 664/942 = 70.488..
        assert_eq!(pct_tenths(495, 942), 526);
        assert_eq!(pct_tenths(25, 942), 27);
        assert_eq!(pct_tenths(664, 942), 705);
        assert_eq!(pct_tenths(942, 942), 1000);
        assert_eq!(pct_tenths(1, 3), 333);
        assert_eq!(pct_tenths(1, 8), 125);
    }

    #[test]
    fn row_percentages_sum_to_hundred() {
        let mut patients = Vec::new();
        for (i, (age, label)) in [("Child", "Absent"), ("Infant", "Present"), ("Child", "Unknown")].iter().enumerate() {
            let text = format!("{i} 1 4000\nAV a.hea a.wav\n#Age: {age}\n#Murmur: {label}\n");
            patients.push(parse_patient_metadata(&text).unwrap());
        }
        let report = dataset_stats(&patients);
        let total: f64 = report.rows[..6].iter().map(|r| report.percent(r.total()).parse::<f64>().unwrap()).sum();
        assert!((total - 100.0).abs() <= 0.2);
    }
}
