use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use murmur_core::experiment::{run_experiment, Command, ExperimentError, Overrides, RunConfig, DEFAULTS_TOML};
use murmur_core::synthetic::{generate_synthetic_dataset, SyntheticConfig};

#[derive(Parser)]
#[command(name = "murmur", version, about = "Heart-murmur classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// TOML config, or a JSON manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train from random initialisation.
    #[arg(long)]
    no_pretrained: bool,
    /// Seed MC-dropout sampling so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Split patients, cache spectrograms and extract signal features.
    Prepare(RunArgs),
    /// Train the Present-vs-rest and Unknown-vs-rest networks.
    TrainDbres(RunArgs),
    /// Fit the boosted-tree fusion model.
    TrainFusion(RunArgs),
    /// Score DBRes and fused predictions on the held-out patients.
    Evaluate(RunArgs),
    /// Write predictions for the patients in `predict_dir`.
    Predict(RunArgs),
    /// Label counts by age group and the recording-length histogram.
    Stats(RunArgs),
    /// Print the annotated default configuration.
    Defaults,
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        patients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Omit murmur labels (for `predict`).
        #[arg(long)]
        unlabeled: bool,
    },
}

fn run(command: Command, args: &RunArgs) -> Result<String, ExperimentError> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(&Overrides {
        data_dir: args.data_dir.clone(),
        output_dir: args.output_dir.clone(),
        seed: args.seed,
        no_pretrained: args.no_pretrained,
        deterministic: args.deterministic,
    });
    let outcome = run_experiment(command, &cfg)?;
    Ok(format!("{}\nmanifest: {}", outcome.summary.trim_end(), outcome.manifest.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Prepare(a) => (Command::Prepare, a),
        Cmd::TrainDbres(a) => (Command::TrainDbres, a),
        Cmd::TrainFusion(a) => (Command::TrainFusion, a),
        Cmd::Evaluate(a) => (Command::Evaluate, a),
        Cmd::Predict(a) => (Command::Predict, a),
        Cmd::Stats(a) => (Command::Stats, a),
        Cmd::Defaults => {
            print!("{DEFAULTS_TOML}");
            return ExitCode::SUCCESS;
        }
        Cmd::Synth { out, patients, seed, unlabeled } => {
            let cfg = SyntheticConfig { n_patients: patients, seed, labeled: !unlabeled, ..Default::default() };
            return match generate_synthetic_dataset(&out, &cfg) {
                Ok(p) => {
                    println!("wrote {} patients to {}", p.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(3)
                }
            };
        }
    };
    match run(command, &args) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{command} failed");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
