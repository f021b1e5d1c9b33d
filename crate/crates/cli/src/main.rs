use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedskew_cli::{run_file, Command};

#[derive(Parser)]
#[command(name = "fedskew", version, about = "Federated averaging under client label skew")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// FedAvg and the matched centralized baseline: rounds.csv, summary.json.
    Train(Args),
    /// Weight divergence and accuracy over an EMD grid: divergence.csv, accuracy_vs_emd.csv.
    SweepEmd(Args),
    /// Check the weight-divergence bound on the full-gradient pair: bound.csv.
    VerifyBound(Args),
    /// Global data-sharing experiment: sharing.csv, emd_shift.csv.
    Share(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed, overriding the config's `global_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::SweepEmd(a) => (Command::SweepEmd, a),
        Cmd::VerifyBound(a) => (Command::VerifyBound, a),
        Cmd::Share(a) => (Command::Share, a),
    };
    match run_file(cmd, &args.config, args.out, args.seed) {
        Ok(outcome) => {
            println!("{}", outcome.digest());
            let code = outcome.exit_code();
            if code != 0 {
                eprintln!(
                    "{}",
                    serde_json::json!({"error": "bound_violated", "exit_code": code, "message": "divergence bound violated"})
                );
            }
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
