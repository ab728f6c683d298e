use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cycflow::decode::{TwoOptStrategy, DEFAULT_MAX_PASSES};
use cycflow::flow::DEFAULT_STEPS;

#[derive(Debug, Parser)]
#[command(name = "cycflow", version, about = "Learned point transport for the planar TSP")]
pub struct Cli {
    /// Worker threads for labeling, training and evaluation [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Ordered reductions; wall-clock fields in written artifacts become `-`
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate uniform random instances and label them with a tour oracle
    Gen(GenArgs),
    /// Train a velocity field (or the direct angle-regression baseline)
    Train(TrainArgs),
    /// Solve every instance of a dataset with a trained model
    Solve(SolveArgs),
    /// Solve a labeled dataset and report optimality gaps and timings
    Eval(EvalArgs),
    /// Compare angular sort, direct angle regression and the flow on one dataset
    Ablate(AblateArgs),
    /// Median per-stage latency on fresh random instances
    Bench(BenchArgs),
    /// Dump the aligned circle target of one labeled instance
    Couple(CoupleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    Heldkarp,
    Heuristic,
    Bruteforce,
    /// Held-Karp up to 16 nodes, the heuristic above
    Auto,
    /// Leave instances unlabeled
    None,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Solver::Auto)]
    pub solver: Solver,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Flow,
    Direct,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Flow => "flow",
            ModelKind::Direct => "direct",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled dataset
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    /// TOML training config; flags below take precedence over it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-epoch CSV `epoch,loss,lr,wallclock_s` [default: <out>.telemetry.csv]
    #[arg(long)]
    pub telemetry: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelKind::Flow)]
    pub kind: ModelKind,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_floor: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop early once epoch loss < ratio × zero-init loss
    #[arg(long)]
    pub target_loss_ratio: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ff_mult: Option<usize>,
    #[arg(long)]
    pub t_dim: Option<usize>,
    /// Feed canonical x_0 to the network next to x_t (4 input channels)
    #[arg(long)]
    pub x0_channels: bool,
    /// No per-epoch progress on stderr
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// Euler steps K
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_PASSES)]
    pub max_passes: usize,
    /// 2-opt exchange rule: best | first
    #[arg(long = "two-opt", default_value = "best")]
    pub strategy: TwoOptStrategy,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Skip 2-opt refinement
    #[arg(long)]
    pub no_refine: bool,
    /// Write the solved tours as a dataset
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the Euler trajectory of one instance as CSV `step,t,node,x,y`
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Record index for --trajectory
    #[arg(long, default_value_t = 0)]
    pub trajectory_index: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Per-instance CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write the summary report here
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Flow checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Direct angle-regression checkpoint (`train --kind direct`)
    #[arg(long)]
    pub direct_checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "20,50")]
    pub sizes: Vec<usize>,
    /// Euler step counts to time
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub steps: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_PASSES)]
    pub max_passes: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoupleArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// CSV `node,x0,y0,x1,y1` [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}
