//! Command-line front end: synthetic data generation, training, decoding,
//! scoring, gradient checking, and beam sweeps.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use prefixboost::loss::Objective;
use prefixboost::Error;

#[derive(Parser)]
#[command(
    name = "prefixboost",
    about = "Attention encoder-decoder training with beam-level sequence losses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/dev datasets and a vocab file.
    Synth {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model; sequence objectives need a warm-start checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Warm-start checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Override the configured objective (CE, MBR, SM, PAPB).
        #[arg(long)]
        objective: Option<String>,
    },
    /// Beam-decode a dataset with a trained checkpoint.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 10)]
        beam: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a hypothesis file against a reference dataset.
    Score {
        #[arg(long, value_name = "REF")]
        reference: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Optional per-utterance breakdown CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients against finite differences on a micro model.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        objective: String,
        /// Central-difference step; balances truncation against roundoff
        /// noise on small-magnitude gradient coordinates.
        #[arg(long, default_value_t = 3e-4)]
        eps: f64,
        /// Negative control: double the analytic gradients first.
        #[arg(long)]
        corrupt_grad: bool,
    },
    /// Train per training-beam-size and report a WER matrix over decode beams.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ntr: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        nde: Vec<usize>,
        #[arg(long)]
        init: Option<PathBuf>,
    },
}

fn parse_objective(s: &str) -> Result<Objective, Error> {
    s.parse()
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Synth { config } => commands::cmd_synth(&config).map(|()| true),
        Command::Train {
            config,
            init,
            objective,
        } => {
            let objective = objective.as_deref().map(parse_objective).transpose()?;
            commands::cmd_train(&config, init.as_deref(), objective).map(|()| true)
        }
        Command::Decode {
            checkpoint,
            data,
            vocab,
            beam,
            out,
        } => commands::cmd_decode(&checkpoint, &data, &vocab, beam, &out).map(|()| true),
        Command::Score {
            reference,
            vocab,
            hyp,
            out,
        } => commands::cmd_score(&reference, &vocab, &hyp, out.as_deref()).map(|()| true),
        Command::Gradcheck {
            config,
            objective,
            eps,
            corrupt_grad,
        } => {
            let objective = parse_objective(&objective)?;
            commands::cmd_gradcheck(&config, objective, eps, corrupt_grad)
        }
        Command::Sweep {
            config,
            ntr,
            nde,
            init,
        } => commands::cmd_sweep(&config, &ntr, &nde, init.as_deref()).map(|()| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) | Error::Parse { .. } => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}
