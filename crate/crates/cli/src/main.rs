//! Command-line pipeline for the relation-tie graph model: synthesize a
//! planted-ties corpus, inspect the co-occurrence graph, train the model and
//! evaluate it held-out.

mod commands;
mod config;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use tieforge_core::corpus::CorpusError;
use tieforge_core::trainer::TrainError;

#[derive(Parser, Debug)]
#[command(
    name = "tieforge",
    about = "Distant-supervision relation extraction with a relation-tie graph classifier",
    version
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override for both corpus generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Harmonic factor weighting the exclusion penalty.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Transition-filter threshold.
    #[arg(long, global = true)]
    theta: Option<f64>,

    /// Number of propagation layers.
    #[arg(long, global = true)]
    gcn_layers: Option<usize>,

    /// Disable the tie graph: identity transition matrix and zero penalty.
    #[arg(long, global = true)]
    graph_off: bool,

    /// Also export the 2-D principal-axes projection of the relation
    /// embeddings during evaluation.
    #[arg(long, global = true)]
    export_embeddings: bool,

    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with planted relation ties.
    Synth,
    /// Build and dump the co-occurrence, transition and exclusion matrices.
    BuildGraph,
    /// Train the model and write a checkpoint plus a loss trace.
    Train,
    /// Evaluate a checkpoint held-out: PR curve, AUC, P@N and reports.
    Eval,
}

fn effective_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
        config.synth.seed = seed;
    }
    if let Some(lambda) = cli.lambda {
        config.train.lambda = lambda;
    }
    if let Some(theta) = cli.theta {
        config.train.theta = theta;
    }
    if let Some(layers) = cli.gcn_layers {
        config.train.gcn_layers = layers;
    }
    if cli.graph_off {
        config.train.graph_enabled = false;
        config.train.lambda = 0.0;
    }
    if cli.export_embeddings {
        config.eval.export_embeddings = true;
    }
    Ok(config)
}

/// Invalid configurations exit with 2, runtime failures with 1.
fn exit_code_for(error: &anyhow::Error) -> u8 {
    for cause in error.chain() {
        if let Some(CorpusError::Spec(_)) = cause.downcast_ref::<CorpusError>() {
            return 2;
        }
        if let Some(TrainError::Config(_)) = cause.downcast_ref::<TrainError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> anyhow::Result<()> {
        let config = effective_config(&cli)?;
        match cli.command {
            Command::Synth => commands::cmd_synth(&config, &cli.out),
            Command::BuildGraph => commands::cmd_build_graph(&config, &cli.out),
            Command::Train => commands::cmd_train(&config, &cli.out),
            Command::Eval => commands::cmd_eval(&config, &cli.out),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(exit_code_for(&error))
        }
    }
}
