use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowmap::cli::commands::{run_command, Command, RunOptions};
use flowmap::cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "flowmap", version, about = "Train, distill and evaluate two-time flow maps")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Fit a velocity field by interpolant regression
    TrainVelocity(Flags),
    /// Distill a flow map from a teacher (lmd, emd or pfmm)
    Distill(Flags),
    /// Train a flow map directly (fmm, ee or denoiser)
    TrainFmm(Flags),
    /// Sample from a checkpoint and report KL, W2 and teacher agreement
    Evaluate(Flags),
    /// Invert to an intermediate time and regenerate under another class
    StyleTransfer(Flags),
    /// Run the closed-form checks, bound audit and denoiser collapse
    OracleSuite(Flags),
    /// Draw samples from a checkpoint
    Sample(Flags),
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Sub::TrainVelocity(f) => (Command::TrainVelocity, f),
        Sub::Distill(f) => (Command::Distill, f),
        Sub::TrainFmm(f) => (Command::TrainFmm, f),
        Sub::Evaluate(f) => (Command::Evaluate, f),
        Sub::StyleTransfer(f) => (Command::StyleTransfer, f),
        Sub::OracleSuite(f) => (Command::OracleSuite, f),
        Sub::Sample(f) => (Command::Sample, f),
    };
    let opts = RunOptions {
        seed: flags.seed,
        deterministic: flags.deterministic,
        paper_scale: flags.paper_scale,
        out: flags.out,
    };
    let result = ExperimentConfig::load(&flags.config)
        .and_then(|cfg| run_command(command, cfg, &opts, &mut std::io::stderr()));
    match result {
        Ok(manifest) => {
            println!("{} finished; {} files listed in the manifest", command.name(), manifest.files.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("flowmap {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
