//! `vafnet`: train networks with variable activation functions, run K-fold
//! experiments, and inspect saved models.
//!
//! Exit status is 0 on success, 1 for bad input and 2 when training
//! diverges.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::{Experiment, ExperimentFlags};

#[derive(Debug, Parser)]
#[command(name = "vafnet", version, about = "Feed-forward networks with trainable activation subnetworks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model with early stopping (60/20/20 split).
    Train(ExperimentFlags),
    /// K-fold cross-validation over architectures, inits and learning rates.
    Kfold(ExperimentFlags),
    /// Sample a trained VAF layer as CSV.
    VafCurve {
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Layer index inside the model.
        #[arg(long)]
        layer: usize,
        #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
        to: f64,
        #[arg(long, default_value_t = 201)]
        samples: usize,
        /// CSV file to write; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print parameter counts of a model file or an architecture.
    Inspect {
        /// Model file written by `train`.
        #[arg(long, conflicts_with = "arch")]
        model: Option<PathBuf>,
        /// Architecture name such as vnet3_50_25.
        #[arg(long, requires_all = ["inputs", "outputs"])]
        arch: Option<String>,
        #[arg(long)]
        inputs: Option<usize>,
        #[arg(long)]
        outputs: Option<usize>,
        #[arg(long)]
        per_neuron: bool,
    },
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train(flags) => commands::cmd_train(&Experiment::resolve(&flags)?),
        Command::Kfold(flags) => commands::cmd_kfold(&Experiment::resolve(&flags)?),
        Command::VafCurve {
            model,
            layer,
            from,
            to,
            samples,
            out,
        } => commands::cmd_vaf_curve(&model, layer, from, to, samples, out.as_ref()),
        Command::Inspect {
            model,
            arch,
            inputs,
            outputs,
            per_neuron,
        } => match (model, arch) {
            (Some(path), _) => {
                let net = vafnet::Network::load(&path)?;
                Ok(format!("{}\n{}", path.display(), commands::inspect_network(&net).trim_end()))
            }
            (None, Some(arch)) => commands::cmd_inspect_arch(
                &arch.parse()?,
                inputs.unwrap_or(1),
                outputs.unwrap_or(1),
                !per_neuron,
            ),
            (None, None) => anyhow::bail!("give --model or --arch"),
        },
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let diverged = err
        .chain()
        .filter_map(|e| e.downcast_ref::<vafnet::Error>())
        .any(vafnet::Error::is_divergence);
    if diverged {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
