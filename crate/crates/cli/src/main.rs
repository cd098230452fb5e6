//! `mac`: preprocess, train, evaluate and inspect models from the shell.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{ModelArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "mac", version, about = "Selective state-space CPU performance predictor")]
pub struct Cli {
    /// Seed for splits, initialisation and shuffling.
    #[arg(long, global = true, env = "MAC_SEED", default_value_t = 0)]
    pub seed: u64,
    /// JSON file whose `seed`, `model` and `train` entries override flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct InputArgs {
    /// Feature schema (JSON).
    #[arg(long)]
    pub schema: PathBuf,
    /// Raw CSV file.
    #[arg(long)]
    pub input: PathBuf,
    /// Mapping file for expanded columns, as NAME=PATH. Repeatable.
    #[arg(long = "mapping", value_name = "NAME=PATH")]
    pub mappings: Vec<String>,
    /// Rows with an output z-score above this are removed.
    #[arg(long, default_value_t = 3.0)]
    pub z_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    #[value(name = "mamba-only")]
    MambaOnly,
    #[value(name = "mamba+intra")]
    MambaIntra,
    Full,
    #[value(name = "w/o-char")]
    WithoutChar,
    #[value(name = "w/o-mem")]
    WithoutMem,
    #[value(name = "w/o-cpu")]
    WithoutCpu,
    #[value(name = "w/o-other")]
    WithoutOther,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Expansion factor S.
    S,
    /// State size N.
    N,
    /// Attention layers L.
    L,
    /// Attention heads H.
    H,
    /// Huber threshold δ.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Ridge,
    Lasso,
    Elasticnet,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, split and standardise a raw CSV.
    Preprocess {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic suite with a known generating function.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON generator settings; unspecified fields take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        /// Omit pairwise interaction terms.
        #[arg(long)]
        linear: bool,
    },
    /// Train on a preprocessed directory.
    Train {
        /// Output directory of `preprocess`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Print the metric table of a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-fold cross-validation on everything but a held-out test split.
    Cv {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Train folds one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Per-sample predictions in original units.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw CSV in the checkpoint's schema.
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "mapping", value_name = "NAME=PATH")]
        mappings: Vec<String>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write every attention matrix of one sample.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        /// Index of the sample within the split.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write a long-format CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Fit linear baselines with validation-tuned regularisation.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = BaselineArg::All)]
        kind: BaselineArg,
    },
    /// Train and evaluate an ablated topology.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        variant: Variant,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Vary one hyperparameter over a grid, others fixed.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated grid; defaults to the standard grid of the axis.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
