use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evodiff::Error;

mod commands;
mod manifest;

/// Gradient-free guided diffusion: train denoisers, sample designs and run
/// paired guided/unguided studies.
#[derive(Parser, Debug)]
#[command(name = "evodiff", version)]
struct Cli {
    /// Worker threads for sampling and experiments; 0 uses every core.
    /// Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the MLP noise predictor on a dataset.
    Train(TrainArgs),
    /// Draw designs, optionally guided by a fitness.
    Sample(SampleArgs),
    /// Run a paired experiment from a config file.
    Experiment(ExperimentArgs),
    /// Evaluate designs under a named fitness.
    Eval(EvalArgs),
    /// Re-plot a summary JSON as an SVG histogram.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON array of design vectors.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    pub data: Option<PathBuf>,
    /// Generate a channel-layout dataset instead: `W,H,n`.
    #[arg(long)]
    pub synth: Option<String>,
    /// Schedule JSON file, inline JSON, or `default`.
    #[arg(long, default_value = "default")]
    pub schedule: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Mixture prior or MLP model JSON.
    #[arg(long)]
    pub denoiser: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Guidance config JSON, or `none`.
    #[arg(long, default_value = "none")]
    pub guidance: String,
    /// Registered fitness name or a task JSON file.
    #[arg(long)]
    pub fitness: String,
    /// Schedule JSON file, inline JSON, or `default`.
    #[arg(long, default_value = "default")]
    pub schedule: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config's run count.
    #[arg(long)]
    pub n_runs: Option<usize>,
    /// Override the config's base seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Registered fitness name or a task JSON file.
    #[arg(long)]
    pub fitness: String,
    /// A design file or a directory of them.
    #[arg(long)]
    pub designs: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Experiment or comparison summary JSON.
    #[arg(long)]
    pub summary: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 640)]
    pub width: u32,
    #[arg(long, default_value_t = 400)]
    pub height: u32,
}

/// 0 ok, 2 config, 3 numeric, 4 fitness, 5 I/O.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::DimMismatch { .. } | Error::StepOutOfRange { .. } | Error::Json { .. } => 2,
        Error::Numeric(_) => 3,
        Error::Fitness { .. } => 4,
        Error::Io { .. } | Error::Csv { .. } => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(2);
    }
    let outcome = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sample(a) => commands::sample(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Eval(a) => commands::eval(a),
        Command::Plot(a) => commands::plot(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
