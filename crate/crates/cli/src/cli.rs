use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use firewatch_core::dpm::PredictionMode;

#[derive(Debug, Parser)]
#[command(name = "firewatch", version, about = "Wildfire monitoring path planners: simulate, train, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a fire episode and write the ground-truth field dump.
    Simulate(SimulateArgs),
    /// Build a roadmap and write it as text.
    BuildGraph(GraphArgs),
    /// Train policy and dynamics model with PPO.
    Train(TrainArgs),
    /// Evaluate a planner over a grid of conditions.
    Eval(EvalArgs),
    /// Evaluate a non-learning planner (shorthand for `eval --planner`).
    Baseline(BaselineArgs),
    /// Write final DPM latents of greedy episodes per fuel value.
    ExportLatents(LatentArgs),
    /// Cross-validated linear-probe accuracy on a latent file.
    Probe(ProbeArgs),
    /// Median wall-clock of greedy decision passes.
    Latency(LatencyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub fuel: Option<f64>,
    #[arg(long)]
    pub wind_speed: Option<f64>,
    #[arg(long)]
    pub fires: Option<u32>,
    #[arg(long)]
    pub ignition_horizon: Option<u32>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Profile {
    Toy,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Current,
    Delta,
    Next,
}

impl From<Mode> for PredictionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Current => PredictionMode::Current,
            Mode::Delta => PredictionMode::Delta,
            Mode::Next => PredictionMode::Next,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub profile: Profile,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub ppo_epochs: Option<usize>,
    #[arg(long)]
    pub minibatch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Feed the policy a zero latent.
    #[arg(long)]
    pub no_latent: bool,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Line-delimited JSON training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write the checkpoint every N updates as well as at the end.
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum PlannerKind {
    Learned,
    Sampling,
    Random,
}

#[derive(Debug, Args, Clone)]
pub struct CampaignArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub fuel_values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub fire_counts: Option<Vec<u32>>,
    #[arg(long)]
    pub n_instances: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Per-instance metrics file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-cell summary file.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "learned")]
    pub planner: PlannerKind,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub campaign: CampaignArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum BaselineKind {
    Sampling,
    Random,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum, default_value = "sampling")]
    pub kind: BaselineKind,
    #[arg(long)]
    pub n_initial_observations: Option<usize>,
    #[arg(long)]
    pub distance_weight: Option<f64>,
    #[command(flatten)]
    pub campaign: CampaignArgs,
}

#[derive(Debug, Args)]
pub struct LatentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub fuel_values: Option<Vec<f64>>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Keep only the lowest and highest labels.
    #[arg(long)]
    pub extremes: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct LatencyArgs {
    /// Checkpoint to time; an untrained model of `--profile` otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub profile: Profile,
    #[arg(long, default_value_t = 200)]
    pub nodes: usize,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub passes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
