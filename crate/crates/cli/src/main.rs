//! `spikekws` command-line interface.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "spikekws", version, about = "Streaming spiking keyword spotting")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// TOML run configuration; every setting has a default.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). 1 gives bit-exact reruns.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (overrides `paths.out_dir`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic chirp corpus and its manifest.
    DatasetGen(commands::DatasetGenArgs),
    /// Train a network; writes checkpoint.json, epochs.csv and config.toml.
    Train,
    /// Evaluate a checkpoint on a manifest split; writes eval.json and per_sample.csv.
    Eval(commands::EvalArgs),
    /// Run one WAV file through a checkpoint until the decision is taken.
    Stream(commands::StreamArgs),
    /// Operation counts and energy for one WAV file; writes energy.json and spike_rate.csv.
    EnergyReport(commands::StreamArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", serde_json::json!({"error": e.to_string(), "kind": "config"}));
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::DatasetGen(args) => commands::dataset_gen(&cli.global, &args),
        Command::Train => commands::train(&cli.global),
        Command::Eval(args) => commands::eval(&cli.global, &args),
        Command::Stream(args) => commands::stream(&cli.global, &args),
        Command::EnergyReport(args) => commands::energy_report(&cli.global, &args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": e.to_string(), "kind": e.kind()}));
            ExitCode::FAILURE
        }
    }
}
