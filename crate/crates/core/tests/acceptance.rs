//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Criteria that need external data print
//! NOT RUN instead.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use murmur_core::bayes_resnet::{load_trained_model, mc_predict, ResNet, TrainedModel, TrainingHistory};
use murmur_core::cascade::{cascade_label, CascadeConfig};
use murmur_core::dsp::{log_mel_spectrogram, segment_signal, SegmentationConfig, Spectrogram, SpectrogramConfig};
use murmur_core::experiment::{run_experiment, Command, RunConfig};
use murmur_core::ingestion::{render_patient_metadata, AgeCategory, AudioSignal, Location, PatientRecord, RecordingRef, Sex};
use murmur_core::scoring::{weighted_accuracy, ConfusionMatrix};
use murmur_core::signal_features::extract_signal_features;
use murmur_core::synthetic::{generate_synthetic_dataset, synthesize_recording, SyntheticConfig};
use murmur_core::MurmurLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

type Check = Result<String, String>;

fn budget(elapsed: Duration, limit: Duration) -> Check {
    if elapsed <= limit {
        Ok(format!("{:.2}s", elapsed.as_secs_f64()))
    } else {
        Err(format!("took {:.1}s, budget {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
    }
}

fn scorer_oracle() -> Check {
    let t0 = Instant::now();
    // one patient per unit count, weights by true label, straight from the definition
    fn brute_force(counts: &[[u64; 3]; 3]) -> f64 {
        let labels = ["Present", "Unknown", "Absent"];
        let weight = |l: &str| match l {
            "Present" => 5u64,
            "Unknown" => 3,
            _ => 1,
        };
        let mut patients = Vec::new();
        for (t, row) in counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    patients.push((labels[t], labels[p]));
                }
            }
        }
        let num: u64 = patients.iter().filter(|(t, p)| t == p).map(|(t, _)| weight(t)).sum();
        let den: u64 = patients.iter().map(|(t, _)| weight(t)).sum();
        num as f64 / den as f64
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 1000 {
        let mut counts = [[0u64; 3]; 3];
        for row in &mut counts {
            for c in row.iter_mut() {
                *c = rng.random_range(0..40);
            }
        }
        if counts.iter().flatten().all(|&c| c == 0) {
            continue;
        }
        let got = weighted_accuracy(&ConfusionMatrix { counts }).map_err(|e| e.to_string())?;
        let want = brute_force(&counts);
        if got != want {
            return Err(format!("{counts:?}: {got} != {want}"));
        }
        checked += 1;
    }
    // c = (3, 1, 10), t = (5, 2, 20)
    let fixture = ConfusionMatrix { counts: [[3, 2, 0], [0, 1, 1], [5, 5, 10]] };
    let wa = weighted_accuracy(&fixture).map_err(|e| e.to_string())?;
    if wa != 28.0 / 51.0 {
        return Err(format!("fixture gave {wa}, expected 28/51"));
    }
    let t = budget(t0.elapsed(), Duration::from_secs(1))?;
    Ok(format!("1000 random matrices exact, fixture = 28/51 ({t})"))
}

fn spectrogram_geometry() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = |secs: usize, rng: &mut ChaCha8Rng| {
        AudioSignal::new((0..secs * 4000).map(|_| rng.random_range(-1.0..1.0)).collect(), 4000)
    };
    let spec = log_mel_spectrogram(&noise(4, &mut rng), &SpectrogramConfig::default()).map_err(|e| e.to_string())?;
    let shape = (spec.n_mels(), spec.n_frames());
    if shape != (64, 398) {
        return Err(format!("shape {shape:?}"));
    }
    let seg = SegmentationConfig::default();
    for (secs, want) in [(5, 2), (45, 42)] {
        let n = segment_signal(&noise(secs, &mut rng), &seg).map_err(|e| e.to_string())?.len();
        if n != want {
            return Err(format!("{secs} s gave {n} segments, expected {want}"));
        }
    }
    let t = budget(t0.elapsed(), Duration::from_secs(1))?;
    Ok(format!("64x398, 2 and 42 segments ({t})"))
}

fn cascade_truth_table() -> Check {
    let t0 = Instant::now();
    let cfg = CascadeConfig::default();
    // a two-class probability vector [1 - p, p] classifies positive when p wins or ties
    let positive = |p: f64| p >= 1.0 - p;
    let (mut cells, mut ties) = (0, 0);
    for i in 0..=100 {
        for j in 0..=100 {
            let (p, u) = (i as f64 / 100.0, j as f64 / 100.0);
            let want = match (positive(p), positive(u)) {
                (true, _) => MurmurLabel::Present,
                (false, true) => MurmurLabel::Unknown,
                (false, false) => MurmurLabel::Absent,
            };
            let got = cascade_label(p, u, &cfg);
            if got != want {
                return Err(format!("({p}, {u}): {got} != {want}"));
            }
            if i == 50 || j == 50 {
                ties += 1;
            }
            cells += 1;
        }
    }
    let t = budget(t0.elapsed(), Duration::from_secs(1))?;
    Ok(format!("{cells} cells match, {ties} on a threshold ({t})"))
}

fn signal_feature_analytics() -> Check {
    let t0 = Instant::now();
    let fs = 4000u32;
    let n = 4321;
    let sine = AudioSignal::new(
        (0..n).map(|i| (2.0 * std::f64::consts::PI * 500.0 * i as f64 / f64::from(fs)).sin()).collect(),
        fs,
    );
    let f = extract_signal_features(&sine).map_err(|e| e.to_string())?;
    let rms_err = (f.rms - std::f64::consts::FRAC_1_SQRT_2).abs();
    if rms_err > 1e-3 {
        return Err(format!("rms {} off by {rms_err}", f.rms));
    }
    let bin = f64::from(fs) / n as f64;
    if (f.dominant_frequency_hz - 500.0).abs() > bin {
        return Err(format!("dominant frequency {} Hz, bin {bin} Hz", f.dominant_frequency_hz));
    }

    // time-domain location/scale features scale with the amplitude; the
    // frequency-domain and shape features are invariant to it
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let len = rng.random_range(2000..12000);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: f64 = rng.random_range(0.01..50.0);
        let base = extract_signal_features(&AudioSignal::new(x.clone(), fs)).map_err(|e| e.to_string())?;
        let scaled = extract_signal_features(&AudioSignal::new(x.iter().map(|v| v * a).collect(), fs))
            .map_err(|e| e.to_string())?;
        let pairs = [
            (base.mean * a, scaled.mean),
            (base.std * a, scaled.std),
            (base.min * a, scaled.min),
            (base.max * a, scaled.max),
            (base.rms * a, scaled.rms),
            (base.total_power * a * a, scaled.total_power),
            (base.skewness, scaled.skewness),
            (base.kurtosis, scaled.kurtosis),
            (base.zero_crossing_rate, scaled.zero_crossing_rate),
            (base.dominant_frequency_hz, scaled.dominant_frequency_hz),
            (base.spectral_entropy, scaled.spectral_entropy),
            (base.centroid_mean_hz, scaled.centroid_mean_hz),
            (base.centroid_std_hz, scaled.centroid_std_hz),
            (base.rolloff_mean_hz, scaled.rolloff_mean_hz),
            (base.rolloff_std_hz, scaled.rolloff_std_hz),
            (base.bandwidth_mean_hz, scaled.bandwidth_mean_hz),
            (base.bandwidth_std_hz, scaled.bandwidth_std_hz),
        ];
        for (i, (want, got)) in pairs.into_iter().enumerate() {
            let rel = (want - got).abs() / want.abs().max(1e-300);
            if want != got && rel > 1e-9 {
                return Err(format!("feature {i}: {want} vs {got} (rel {rel:e}) at scale {a}"));
            }
            worst = worst.max(if want == got { 0.0 } else { rel });
        }
    }
    let t = budget(t0.elapsed(), Duration::from_secs(10))?;
    Ok(format!("rms err {rms_err:.1e}, f_dom {} Hz, worst scale rel err {worst:.1e} ({t})", f.dominant_frequency_hz))
}

struct SmokeRun {
    _dir: tempfile::TempDir,
    data: PathBuf,
    out: PathBuf,
    result: Result<(f64, f64), String>,
    elapsed: Duration,
}

fn smoke_run() -> SmokeRun {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("data");
    let out = dir.path().join("run");
    let t0 = Instant::now();
    let result = (|| {
        let synth = SyntheticConfig { n_patients: 30, ..Default::default() };
        generate_synthetic_dataset(&data, &synth).map_err(|e| e.to_string())?;
        let cfg = RunConfig::smoke(&data, &out);
        for command in [Command::Prepare, Command::TrainDbres, Command::TrainFusion, Command::Evaluate] {
            run_experiment(command, &cfg).map_err(|e| format!("{command}: {e} (exit {})", e.exit_code()))?;
        }
        for report in ["dbres", "fusion", "baseline"] {
            let text = std::fs::read_to_string(out.join("reports").join(format!("{report}.json")))
                .map_err(|e| format!("{report} report: {e}"))?;
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{report} report: {e}"))?;
            let wa = v["weighted_accuracy"].as_f64().ok_or(format!("{report} report lacks weighted_accuracy"))?;
            if !(0.0..=1.0).contains(&wa) {
                return Err(format!("{report} weighted accuracy {wa}"));
            }
        }
        let summary = evaluate_summary(&out)?;
        Ok((summary["dbres_weighted_accuracy"], summary["baseline_weighted_accuracy"]))
    })();
    SmokeRun { _dir: dir, data, out, result, elapsed: t0.elapsed() }
}

fn evaluate_summary(out: &Path) -> Result<BTreeMap<String, f64>, String> {
    let text = std::fs::read_to_string(out.join("manifests/evaluate.json")).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let summary = v["summary"].as_object().ok_or("manifest lacks a summary")?;
    Ok(summary.iter().filter_map(|(k, v)| v.as_f64().map(|x| (k.clone(), x))).collect())
}

fn end_to_end(run: &SmokeRun) -> Check {
    let (dbres, baseline) = run.result.clone()?;
    let t = budget(run.elapsed, Duration::from_secs(15 * 60))?;
    if dbres > baseline {
        Ok(format!("DBRes WA {dbres:.3} > majority baseline {baseline:.3} ({t})"))
    } else {
        Err(format!("DBRes WA {dbres:.3} does not beat majority baseline {baseline:.3}"))
    }
}

fn probe_spectrograms(run: &SmokeRun) -> Result<Vec<Spectrogram>, String> {
    let cfg = RunConfig::smoke(&run.data, &run.out);
    let synth = SyntheticConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut probes = Vec::new();
    for i in 0..20 {
        let label = MurmurLabel::ALL[i % 3];
        let sig = synthesize_recording(label, 6.0, &synth, &mut rng);
        for seg in segment_signal(&sig, &cfg.segmentation).map_err(|e| e.to_string())?.iter().take(2) {
            probes.push(log_mel_spectrogram(&seg.signal, &cfg.spectrogram).map_err(|e| e.to_string())?);
        }
    }
    Ok(probes)
}

fn mc_dropout(run: &SmokeRun) -> Check {
    run.result.as_ref().map_err(|e| format!("needs the smoke-trained model: {e}"))?;
    let t0 = Instant::now();
    let (trained, _) = load_trained_model(&run.out.join("models/present")).map_err(|e| e.to_string())?;
    let probes = probe_spectrograms(run)?;

    // the same trained weights with dropout switched off
    let mut config = trained.config.clone();
    config.dropout_p = 0.0;
    let mut init_rng = ChaCha8Rng::seed_from_u64(0);
    let net = ResNet::new(&config.arch, 0.0, &mut init_rng).map_err(|e| e.to_string())?;
    net.load_state(&trained.net.state_dict().map_err(|e| e.to_string())?, false).map_err(|e| e.to_string())?;
    let frozen = TrainedModel { task: trained.task, config, net, history: TrainingHistory::default() };
    let mut rng_a = ChaCha8Rng::seed_from_u64(10);
    let mut rng_b = ChaCha8Rng::seed_from_u64(11);
    for (i, spec) in probes.iter().take(10).enumerate() {
        let a = mc_predict(&frozen, spec, 50, &mut rng_a).map_err(|e| e.to_string())?;
        let b = mc_predict(&frozen, spec, 50, &mut rng_b).map_err(|e| e.to_string())?;
        if a.mean_prob.to_bits() != b.mean_prob.to_bits() || a.std != 0.0 || b.std != 0.0 {
            return Err(format!("p=0 probe {i}: {a:?} vs {b:?}"));
        }
    }

    if trained.config.dropout_p != 0.2 {
        return Err(format!("smoke model has dropout {}", trained.config.dropout_p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut spread = 0;
    for spec in &probes {
        if mc_predict(&trained, spec, 50, &mut rng).map_err(|e| e.to_string())?.std > 0.0 {
            spread += 1;
        }
    }
    let frac = spread as f64 / probes.len() as f64;
    let t = budget(t0.elapsed(), Duration::from_secs(5 * 60))?;
    if frac >= 0.95 {
        Ok(format!("p=0 bit-identical with std 0; p=0.2: std > 0 on {spread}/{} probes ({t})", probes.len()))
    } else {
        Err(format!("p=0.2: std > 0 on only {spread}/{} probes", probes.len()))
    }
}

/// Published murmur-by-age counts: (age row, [Absent, Unknown, Present, Sum] as "n (pct)").
const TABLE_ONE: [(&str, [&str; 4]); 6] = [
    ("Neonate", ["4 (0.4)", "1 (0.1)", "1 (0.1)", "6 (0.6)"]),
    ("Infant", ["76 (8.1)", "25 (2.7)", "25 (2.7)", "126 (13.4)"]),
    ("Child", ["495 (52.6)", "37 (3.9)", "132 (14.0)", "664 (70.5)"]),
    ("Adolescent", ["53 (5.6)", "3 (0.3)", "16 (1.7)", "72 (7.6)"]),
    ("Missing", ["67 (7.1)", "2 (0.2)", "5 (0.5)", "74 (7.9)"]),
    ("Sum", ["695 (73.8)", "68 (7.2)", "179 (19.0)", "942 (100)"]),
];

fn parse_cell(cell: &str) -> (usize, f64) {
    let (n, pct) = cell.trim_end_matches(')').split_once(" (").expect("n (pct)");
    (n.parse().expect("count"), pct.parse().expect("percentage"))
}

fn dataset_stats_fidelity() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).map_err(|e| e.to_string())?;
    let columns = [MurmurLabel::Absent, MurmurLabel::Unknown, MurmurLabel::Present];
    let mut id = 50000;
    for (row, cells) in &TABLE_ONE[..5] {
        let age = match *row {
            "Neonate" => AgeCategory::Neonate,
            "Infant" => AgeCategory::Infant,
            "Child" => AgeCategory::Child,
            "Adolescent" => AgeCategory::Adolescent,
            _ => AgeCategory::Missing,
        };
        for (label, cell) in columns.iter().zip(cells) {
            for _ in 0..parse_cell(cell).0 {
                id += 1;
                let record = PatientRecord {
                    patient_id: id.to_string(),
                    sample_rate_hz: 4000,
                    age_category: age,
                    sex: if id % 2 == 0 { Sex::Female } else { Sex::Male },
                    height_cm: None,
                    weight_kg: None,
                    pregnant: Some(false),
                    murmur_label: Some(*label),
                    recordings: vec![RecordingRef {
                        location: Location::AV,
                        header_file: format!("{id}_AV.hea"),
                        audio_path: format!("{id}_AV.wav"),
                        sample_rate_hz: 4000,
                        duration_s: None,
                    }],
                };
                std::fs::write(data.join(format!("{id}.txt")), render_patient_metadata(&record))
                    .map_err(|e| e.to_string())?;
            }
        }
    }
    let mut cfg = RunConfig::default();
    cfg.data_dir = data;
    cfg.output_dir = dir.path().join("run");
    cfg.write_plots = false;
    run_experiment(Command::Stats, &cfg).map_err(|e| e.to_string())?;
    let csv = std::fs::read_to_string(cfg.output_dir.join("stats/murmur_by_age.csv")).map_err(|e| e.to_string())?;
    let rows: BTreeMap<&str, Vec<&str>> = csv.lines().skip(1).filter_map(|l| l.split_once(',')).map(|(k, v)| (k, v.split(',').collect())).collect();
    let mut compared = 0;
    let mut mismatches = String::new();
    for (row, cells) in &TABLE_ONE {
        let got = rows.get(row).ok_or(format!("no {row} row"))?;
        for (k, cell) in cells.iter().enumerate() {
            let (n, pct) = parse_cell(cell);
            let (got_n, got_pct) = (got[2 * k], got[2 * k + 1]);
            // the table prints 100 % without a decimal
            let pct_text = if *cell == "942 (100)" { "100.0".to_string() } else { format!("{pct:.1}") };
            if got_n != n.to_string() || got_pct != pct_text {
                let _ = write!(mismatches, " {row}/{k}: {got_n} ({got_pct}) vs {cell};");
            }
            compared += 1;
        }
    }
    if mismatches.is_empty() {
        Ok(format!("{compared} cells reproduced"))
    } else {
        Err(mismatches)
    }
}

fn full_data_tier() -> Outcome {
    let (Some(data), Some(weights)) =
        (std::env::var_os("MURMUR_CIRCOR_DIR"), std::env::var_os("MURMUR_PRETRAINED_WEIGHTS"))
    else {
        return Outcome::NotRun("set MURMUR_CIRCOR_DIR and MURMUR_PRETRAINED_WEIGHTS to run the full-data tier".into());
    };
    let out = std::env::var_os("MURMUR_FULL_RUN_OUTPUT").map_or_else(|| std::env::temp_dir().join("murmur-full-run"), PathBuf::from);
    let mut cfg = RunConfig::default();
    cfg.data_dir = PathBuf::from(data);
    cfg.output_dir = out.clone();
    cfg.present_model.pretrained_path = Some(PathBuf::from(&weights));
    cfg.unknown_model.pretrained_path = Some(PathBuf::from(&weights));
    for command in [Command::Prepare, Command::TrainDbres, Command::TrainFusion, Command::Evaluate] {
        if let Err(e) = run_experiment(command, &cfg) {
            return Outcome::Fail(format!("{command}: {e}"));
        }
    }
    let s = match evaluate_summary(&out) {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(e),
    };
    let (wa, acc) = (s["dbres_weighted_accuracy"], s["dbres_accuracy"]);
    let (fwa, facc) = (s["fusion_weighted_accuracy"], s["fusion_accuracy"]);
    let detail = format!("DBRes WA {wa:.3} acc {acc:.3}; fused WA {fwa:.3} acc {facc:.3}");
    if (wa - 0.780).abs() <= 0.05 && facc > acc && fwa < wa {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; only a plain run executes
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let outcome = |c: Check| match c {
        Ok(s) => Outcome::Pass(s),
        Err(s) => Outcome::Fail(s),
    };
    results.push(("scorer oracle equivalence", outcome(scorer_oracle())));
    results.push(("spectrogram geometry", outcome(spectrogram_geometry())));
    results.push(("cascade truth table", outcome(cascade_truth_table())));
    results.push(("signal-feature analytics", outcome(signal_feature_analytics())));
    let run = smoke_run();
    results.push(("MC-dropout behavior", outcome(mc_dropout(&run))));
    results.push(("end-to-end smoke", outcome(end_to_end(&run))));
    results.push(("full-data result tier", full_data_tier()));
    results.push(("dataset stats fidelity", outcome(dataset_stats_fidelity())));

    let mut failed = 0;
    for (name, o) in &results {
        match o {
            Outcome::Pass(d) => println!("PASS     {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL     {name}: {d}");
            }
            Outcome::NotRun(d) => println!("NOT RUN  {name}: {d}"),
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
