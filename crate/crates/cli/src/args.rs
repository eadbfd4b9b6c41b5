use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Synthesize policies for LTL tasks on slippery grid worlds by Q-learning on
/// the product with a limit-deterministic Büchi automaton.
#[derive(Debug, Parser)]
#[command(name = "ldba-synth", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a Q-table and save it with episode statistics.
    Train(TrainArgs),
    /// Run greedy test rollouts of a saved model.
    Test(TestArgs),
    /// Compute the exact maximal satisfaction probability.
    Oracle(OracleArgs),
    /// Train and test over an (eta, mu) grid.
    Sweep(SweepArgs),
}

/// Where the environment and automaton come from.
#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    /// Bundled benchmark; also supplies its training settings.
    #[arg(long)]
    pub benchmark: Option<String>,
    /// Environment JSON file (overrides the benchmark's).
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Automaton JSON file (overrides the benchmark's).
    #[arg(long)]
    pub ldba: Option<PathBuf>,
}

/// Training hyper-parameters. Unset flags keep the benchmark or file values.
#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    /// JSON file with hyper-parameters to start from.
    #[arg(long)]
    pub hyperparams: Option<PathBuf>,
    /// Learning algorithm; only `ql` is implemented.
    #[arg(long = "algorithm")]
    pub algorithm: Option<String>,
    #[arg(long = "episode_num")]
    pub episode_num: Option<usize>,
    #[arg(long = "iteration_num_max")]
    pub iteration_num_max: Option<usize>,
    /// eta, the discount on rewarded transitions.
    #[arg(long = "discount_factor")]
    pub discount_factor: Option<f64>,
    /// mu, the Q-learning step size.
    #[arg(long = "learning_rate")]
    pub learning_rate: Option<f64>,
    #[arg(long = "epsilon")]
    pub epsilon: Option<f64>,
    /// Test the greedy policy after training.
    #[arg(long = "test", value_parser = clap::builder::BoolishValueParser::new())]
    pub test: Option<bool>,
    /// Output directory; the LDBA_SYNTH_RESULTS variable takes precedence.
    #[arg(long = "save_dir")]
    pub save_dir: Option<String>,
    /// Moving-average window for returns; -1 means 30% of episode_num.
    #[arg(long = "average_window", allow_hyphen_values = true)]
    pub average_window: Option<i64>,
    #[arg(long = "seed")]
    pub seed: Option<u64>,
}

/// How test rollouts are judged.
#[derive(Debug, Clone, Args)]
pub struct RolloutArgs {
    /// Steps per rollout (default: iteration_num_max).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Frontier sweeps a rollout must complete to count as satisfying.
    #[arg(long = "required_sweeps")]
    pub required_sweeps: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub rollout: RolloutArgs,
    /// Test rollouts after training.
    #[arg(long, default_value_t = 100)]
    pub rollouts: usize,
    /// State cap for the oracle reference.
    #[arg(long = "state_cap", default_value_t = ldba_synth_core::oracle::DEFAULT_STATE_CAP)]
    pub state_cap: usize,
    /// Suppress the progress display.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Saved model (learned_model.json).
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub rollout: RolloutArgs,
    #[arg(long, default_value_t = 100)]
    pub rollouts: usize,
    /// Seed of the rollout streams (default: the model's training seed).
    #[arg(long = "seed")]
    pub seed: Option<u64>,
    #[arg(long = "save_dir")]
    pub save_dir: Option<String>,
    /// Write the trajectory of rollout 0 to this CSV file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long = "state_cap", default_value_t = ldba_synth_core::oracle::DEFAULT_STATE_CAP)]
    pub state_cap: usize,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Refuse products with more states than this.
    #[arg(long = "state_cap", default_value_t = ldba_synth_core::oracle::DEFAULT_STATE_CAP)]
    pub state_cap: usize,
    /// Write every product state's value to this CSV file.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub rollout: RolloutArgs,
    /// Comma-separated eta values.
    #[arg(long = "grid_eta", value_delimiter = ',', default_values_t = DEFAULT_GRID)]
    pub grid_eta: Vec<f64>,
    /// Comma-separated mu values.
    #[arg(long = "grid_mu", value_delimiter = ',', default_values_t = DEFAULT_GRID)]
    pub grid_mu: Vec<f64>,
    /// Independent trainings per cell.
    #[arg(long, default_value_t = 3)]
    pub trainings: usize,
    /// Test rollouts per training.
    #[arg(long, default_value_t = 20)]
    pub tests: usize,
    /// Worker threads.
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

pub const DEFAULT_GRID: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 0.99];
