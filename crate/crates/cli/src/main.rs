mod commands;
mod grid;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgprune::Strategy;

/// Train, prune and sweep a 1D CNN heartbeat classifier.
#[derive(Parser, Debug)]
#[command(name = "ecgprune", version)]
struct Cli {
    /// Seed for data generation, splits, SMOTE, initialization and training.
    #[arg(long, global = true, env = "ECGPRUNE_SEED", default_value_t = 42)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic five-class beat CSV.
    GenData(GenDataArgs),
    /// Train the baseline model on a beat CSV.
    Train(TrainArgs),
    /// Prune a trained model with one strategy at one sparsity.
    Prune(PruneArgs),
    /// Run every (strategy, sparsity) cell and write plot-ready reports.
    Sweep(SweepArgs),
    /// Print the per-class metrics table of a model.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Beats per class in N,S,V,F,Q order.
    #[arg(long, value_delimiter = ',', default_values_t = [400usize, 400, 400, 400, 400])]
    counts: Vec<usize>,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long, default_value_t = ecgprune::dataset::DEFAULT_NOISE)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Data preparation shared by every command that reads a beat CSV.
#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Beat CSV: label followed by 260 samples per row.
    #[arg(long)]
    data: PathBuf,
    /// Train on the unbalanced training partition.
    #[arg(long)]
    no_smote: bool,
    /// Neighbours considered by SMOTE.
    #[arg(long, default_value_t = 5)]
    smote_k: usize,
}

#[derive(Args, Debug, Clone, Copy)]
struct OptimArgs {
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Early-stopping patience in epochs (0 disables it).
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Plain SGD instead of Adam.
    #[arg(long)]
    sgd: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[command(flatten)]
    optim: OptimArgs,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Training log (JSON); defaults to the model path with `.log.json`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long)]
    sparsity: f64,
    /// Epochs per fine-tuning call.
    #[arg(long, default_value_t = 10)]
    finetune_epochs: usize,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "simple,finetune,multistage")]
    strategies: Vec<Strategy>,
    /// `start:stop:step` or a comma list.
    #[arg(long, default_value = "0.1:0.9:0.1")]
    sparsities: String,
    #[arg(long, default_value_t = 10)]
    finetune_epochs: usize,
    #[command(flatten)]
    optim: OptimArgs,
    /// Report CSV; the JSON form is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Also write one `eta,<strategy>...` file per metric into this directory.
    #[arg(long)]
    series_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Evaluate every beat in the file instead of the test partition.
    #[arg(long)]
    all: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.seed;
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(seed, a),
        Command::Train(a) => commands::train(seed, a),
        Command::Prune(a) => commands::prune(seed, a),
        Command::Sweep(a) => commands::sweep(seed, a),
        Command::Eval(a) => commands::eval(seed, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
