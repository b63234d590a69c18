use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ffattn_core::{LengthSpec, PoolingMode, TaskKind, TrainConfig};
use ffattn_core::trainer::DEFAULT_LR_GRID;

#[derive(Debug, Parser)]
#[command(name = "ffattn", version, about = "Feed-forward attention on long-term memory tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write epochs.csv, result.json and checkpoint.json.
    Train(TrainCmd),
    /// Train once per learning rate and keep the best run.
    Sweep(SweepCmd),
    /// Epochs-to-solve grid over tasks, lengths and pooling modes.
    Table1(Table1Cmd),
    /// Train on widely varying sequence lengths.
    Varlen(VarlenCmd),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckCmd),
    /// Forward+backward throughput for several worker counts.
    Bench(BenchCmd),
    /// Write generated task instances as JSON lines.
    Dump(DumpCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Addition,
    Multiplication,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Addition => TaskKind::Addition,
            TaskArg::Multiplication => TaskKind::Multiplication,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Attention,
    Mean,
}

impl From<PoolingArg> for PoolingMode {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Attention => PoolingMode::Attention,
            PoolingArg::Mean => PoolingMode::UnweightedMean,
        }
    }
}

/// Protocol knobs shared by every training command.
#[derive(Debug, Clone, Args)]
pub struct Protocol {
    /// Maximum number of epochs.
    #[arg(long = "epochs", visible_alias = "max-epochs", default_value_t = 100)]
    pub max_epochs: usize,
    /// Sequences per minibatch.
    #[arg(long = "batch", default_value_t = 100)]
    pub batch_size: usize,
    /// Parameter updates per epoch.
    #[arg(long, default_value_t = 1000)]
    pub updates_per_epoch: usize,
    /// Held-out sequences evaluated after each epoch.
    #[arg(long, default_value_t = 1000)]
    pub test_size: usize,
    /// A prediction is correct when its absolute error is strictly below this.
    #[arg(long, default_value_t = 0.04)]
    pub threshold: f64,
    /// Hidden dimension D.
    #[arg(long = "dim", default_value_t = 100)]
    pub dim: usize,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Protocol {
    pub fn config(&self, task: TaskKind, lengths: LengthSpec, pooling: PoolingMode, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            task,
            lengths,
            pooling,
            lr,
            batch_size: self.batch_size,
            updates_per_epoch: self.updates_per_epoch,
            max_epochs: self.max_epochs,
            test_size: self.test_size,
            threshold: self.threshold,
            seed,
            dim: self.dim,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Lengths {
    /// Nominal length; actual lengths are uniform in [T0, 1.1 T0].
    #[arg(long, conflicts_with_all = ["len_lo", "len_hi"])]
    pub t0: Option<usize>,
    /// Lower end of a uniform length range.
    #[arg(long, requires = "len_hi")]
    pub len_lo: Option<usize>,
    /// Upper end of a uniform length range.
    #[arg(long, requires = "len_lo")]
    pub len_hi: Option<usize>,
}

impl Lengths {
    /// The requested length distribution; `None` when no length flag was given.
    pub fn spec(&self) -> Option<LengthSpec> {
        match (self.t0, self.len_lo, self.len_hi) {
            (Some(t0), _, _) => Some(LengthSpec::Fixed { t0 }),
            (None, Some(lo), Some(hi)) => Some(LengthSpec::Range { lo, hi }),
            _ => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value = "attention")]
    pub pooling: PoolingArg,
    #[command(flatten)]
    pub lengths: Lengths,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Continue from a checkpoint.json written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub protocol: Protocol,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value = "attention")]
    pub pooling: PoolingArg,
    #[command(flatten)]
    pub lengths: Lengths,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LR_GRID)]
    pub lr_grid: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train every rate for the full budget instead of stopping at the best epoch so far.
    #[arg(long)]
    pub full: bool,
    #[command(flatten)]
    pub protocol: Protocol,
}

#[derive(Debug, Args)]
pub struct Table1Cmd {
    /// Restrict to one task (default: both).
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Restrict to one pooling mode (default: both).
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    #[arg(long, value_delimiter = ',', default_values_t = [50usize, 100, 500])]
    pub t0_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LR_GRID)]
    pub lr_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub full: bool,
    /// Exit with status 3 if an attention row misses its epoch budget.
    #[arg(long)]
    pub check: bool,
    #[command(flatten)]
    pub protocol: Protocol,
}

#[derive(Debug, Args)]
pub struct VarlenCmd {
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    #[arg(long, default_value_t = 50)]
    pub len_lo: usize,
    #[arg(long, default_value_t = 1000)]
    pub len_hi: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exit with status 3 if attention stays below 99% or mean pooling matches it.
    #[arg(long)]
    pub check: bool,
    #[command(flatten)]
    pub protocol: Protocol,
}

#[derive(Debug, Args)]
pub struct GradcheckCmd {
    /// Number of random configurations.
    #[arg(long, default_value_t = 20)]
    pub configs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    /// Optional directory for gradcheck.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    #[arg(long, default_value_t = 1000)]
    pub t0: usize,
    #[arg(long = "batch", default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long = "dim", default_value_t = 100)]
    pub dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
    pub workers: Vec<usize>,
    /// Timed forward+backward passes per worker count.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DumpCmd {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[command(flatten)]
    pub lengths: Lengths,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
