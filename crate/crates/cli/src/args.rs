use std::path::PathBuf;

use boltzmann::dbn::Propagation;
use boltzmann::gibbs::{DEFAULT_BURN_IN, DEFAULT_THIN};
use boltzmann::trainer::DEFAULT_CLAMPED_SWEEPS;
use boltzmann::{TrainConfig, UnitFamily};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "ebm", version, about = "Train, sample and check energy-based models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Train an RBM, a Boltzmann machine or a conditional RBM
    Train(TrainCmd),
    /// Greedy layer-wise training of a deep belief network
    PretrainDbn(PretrainCmd),
    /// Unroll a DBN into an autoencoder and fine-tune it by backprop
    FinetuneDbn(FinetuneCmd),
    /// Generate visible vectors by Gibbs sampling
    Sample(SampleCmd),
    /// Write hidden or code representations of each row
    Encode(TransformCmd),
    /// Write mean-field reconstructions of each row
    Reconstruct(TransformCmd),
    /// Verify a small model against exact enumeration
    OracleCheck(OracleCheckCmd),
    /// Re-run the command recorded in a manifest
    Replay(ReplayCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainKind {
    Rbm,
    Bm,
    Crbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyArg {
    Binary,
    Gaussian,
    Poisson,
}

impl From<FamilyArg> for UnitFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Binary => Self::Binary,
            FamilyArg::Gaussian => Self::Gaussian,
            FamilyArg::Poisson => Self::Poisson,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationArg {
    Mean,
    Sample,
}

impl From<PropagationArg> for Propagation {
    fn from(p: PropagationArg) -> Self {
        match p {
            PropagationArg::Mean => Self::Mean,
            PropagationArg::Sample => Self::Sample,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Hyper {
    /// Learning rate
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Mini-batch size
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    /// Gibbs sweeps per negative phase
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of the initial weights
    #[arg(long, default_value_t = 0.01)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Stop once an epoch moves the parameters less than this
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    /// Record the exact log-likelihood each epoch (small binary models only)
    #[arg(long)]
    pub track_loglik: bool,
}

impl Hyper {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            cd_steps: self.k,
            max_epochs: self.epochs,
            init_scale: self.init_scale,
            seed: self.seed,
            convergence_tol: self.tol,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            track_loglik: self.track_loglik,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Runtime {
    /// Worker threads; results do not depend on this
    #[arg(long, env = "EBM_THREADS")]
    pub threads: Option<usize>,
    /// Manifest path (default: <out>.manifest.json)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Value domain of the data columns
    #[arg(long, value_enum, default_value_t = FamilyArg::Binary)]
    pub family: FamilyArg,
    /// Centre and scale each column before training (gaussian data)
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainCmd {
    #[arg(value_enum)]
    pub kind: TrainKind,
    /// CSV file; for crbm the first column is a sequence id
    pub data: PathBuf,
    #[arg(long)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = FamilyArg::Binary)]
    pub hidden_family: FamilyArg,
    /// Number of past frames (crbm)
    #[arg(long, default_value_t = 1)]
    pub history: usize,
    /// Keep the history links at zero (crbm)
    #[arg(long)]
    pub no_history_links: bool,
    /// Keep lateral links at zero (bm)
    #[arg(long)]
    pub no_lateral: bool,
    /// Sweeps for the clamped positive phase (bm)
    #[arg(long, default_value_t = DEFAULT_CLAMPED_SWEEPS)]
    pub clamped_sweeps: usize,
    #[command(flatten)]
    pub data_args: DataArgs,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainCmd {
    pub data: PathBuf,
    /// Layer sizes, input first, e.g. 8,4,2
    #[arg(long, value_delimiter = ',', required = true)]
    pub layers: Vec<usize>,
    #[arg(long, value_enum, default_value_t = FamilyArg::Binary)]
    pub hidden_family: FamilyArg,
    #[arg(long, value_enum, default_value_t = PropagationArg::Mean)]
    pub propagation: PropagationArg,
    #[command(flatten)]
    pub data_args: DataArgs,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FinetuneCmd {
    pub data: PathBuf,
    /// Pre-trained DBN file to unroll
    #[arg(long, conflicts_with = "layers")]
    pub init: Option<PathBuf>,
    /// Pre-train a DBN with these layer sizes first
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// With --layers, skip pre-training and start from random weights
    #[arg(long, requires = "layers")]
    pub random_init: bool,
    #[arg(long, value_enum, default_value_t = FamilyArg::Binary)]
    pub hidden_family: FamilyArg,
    #[arg(long, value_enum, default_value_t = PropagationArg::Mean)]
    pub propagation: PropagationArg,
    /// Pre-training epochs (default: --epochs)
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    /// Pre-training learning rate (default: --lr)
    #[arg(long)]
    pub pretrain_lr: Option<f64>,
    #[command(flatten)]
    pub data_args: DataArgs,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleCmd {
    pub model: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    pub burn_in: usize,
    #[arg(long, default_value_t = DEFAULT_THIN)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Gibbs sweeps per generated frame (crbm)
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// CSV whose last rows seed the history, oldest first (crbm)
    #[arg(long)]
    pub context: Option<PathBuf>,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TransformCmd {
    pub model: PathBuf,
    pub data: PathBuf,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OracleCheckCmd {
    pub model: PathBuf,
    /// Binary rows for the gradient check (default: every visible configuration)
    pub data: Option<PathBuf>,
    /// Also write the check records here
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplayCmd {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded path
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn runtime(&self) -> Option<&Runtime> {
        match self {
            Self::Train(c) => Some(&c.runtime),
            Self::PretrainDbn(c) => Some(&c.runtime),
            Self::FinetuneDbn(c) => Some(&c.runtime),
            Self::Sample(c) => Some(&c.runtime),
            Self::Encode(c) | Self::Reconstruct(c) => Some(&c.runtime),
            Self::OracleCheck(c) => Some(&c.runtime),
            Self::Replay(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Train(_) => "train",
            Self::PretrainDbn(_) => "pretrain-dbn",
            Self::FinetuneDbn(_) => "finetune-dbn",
            Self::Sample(_) => "sample",
            Self::Encode(_) => "encode",
            Self::Reconstruct(_) => "reconstruct",
            Self::OracleCheck(_) => "oracle-check",
            Self::Replay(_) => "replay",
        }
    }
}
