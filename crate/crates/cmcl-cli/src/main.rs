//! Command-line interface for training and evaluating IE/MCL/CMCL
//! ensembles on synthetic or delimited-text datasets.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{
    config_from_file, load_config_file, parse_mode, parse_variant, ConfigFile, DatasetKind,
    RunConfig,
};

#[derive(Parser)]
#[command(
    name = "cmcl",
    about = "Train and evaluate IE/MCL/CMCL classifier ensembles",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an ensemble; writes a training log, checkpoint and report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset (may differ from the training one).
    Eval(EvalArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train once per (beta, K) grid point and tabulate the errors.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training objective: ie, mcl or cmcl.
    #[arg(long)]
    mode: Option<String>,
    /// Ensemble size M.
    #[arg(long)]
    members: Option<usize>,
    /// Overlap K: members assigned per example.
    #[arg(long)]
    overlap: Option<usize>,
    /// KL penalty.
    #[arg(long)]
    beta: Option<f64>,
    /// Bernoulli feature-sharing probability.
    #[arg(long)]
    lambda: Option<f64>,
    /// Gradient variant for unassigned examples: v0 (exact) or v1
    /// (stochastic labeling).
    #[arg(long)]
    variant: Option<String>,
    /// Hidden activation receiving peer features; 0 disables sharing.
    #[arg(long = "share-layer")]
    share_layer: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Held-out fraction for per-epoch evaluation; 0 evaluates on the
    /// training data.
    #[arg(long = "test-fraction")]
    test_fraction: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Dataset source: clusters, rings or file.
    #[arg(long)]
    dataset: Option<String>,
    /// Delimited text file for --dataset file.
    #[arg(long = "data-file")]
    data_file: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long = "per-class")]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Gaussian blob standard deviation.
    #[arg(long)]
    spread: Option<f64>,
    /// Radial noise for the rings generator.
    #[arg(long)]
    noise: Option<f64>,
    /// Generator seed; defaults to --seed.
    #[arg(long = "dataset-seed")]
    dataset_seed: Option<u64>,
    /// Delimited files carry the label in the last column instead of the
    /// first.
    #[arg(long = "label-last")]
    label_last: bool,
    /// Apply global contrast normalization after loading.
    #[arg(long)]
    gcn: bool,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => load_config_file(path)?,
            None => ConfigFile::default(),
        };
        let mut cfg = config_from_file(file)?;
        if let Some(seed) = self.seed {
            cfg.ensemble.seed = seed;
        }
        if let Some(mode) = &self.mode {
            cfg.ensemble.mode = parse_mode(mode)?;
        }
        if let Some(v) = self.members {
            cfg.ensemble.members = v;
        }
        if let Some(v) = self.overlap {
            cfg.ensemble.overlap = v;
        }
        if let Some(v) = self.beta {
            cfg.ensemble.beta = v;
        }
        if let Some(v) = self.lambda {
            cfg.ensemble.lambda = v;
        }
        if let Some(v) = &self.variant {
            cfg.ensemble.grad_variant = parse_variant(v)?;
        }
        if let Some(v) = self.share_layer {
            cfg.ensemble.share_layer = if v == 0 { None } else { Some(v) };
        }
        if let Some(v) = self.epochs {
            cfg.ensemble.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.ensemble.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.ensemble.optimizer.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            cfg.ensemble.optimizer.momentum = v;
        }
        if let Some(v) = self.test_fraction {
            cfg.test_fraction = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }

        if let Some(kind) = &self.dataset {
            cfg.dataset.kind = match kind.as_str() {
                "clusters" => DatasetKind::Clusters,
                "rings" => DatasetKind::Rings,
                "file" => DatasetKind::File,
                other => anyhow::bail!(
                    "unknown dataset {other:?} (expected clusters, rings or file)"
                ),
            };
        }
        if let Some(path) = &self.data_file {
            cfg.dataset.path = Some(path.clone());
            if self.dataset.is_none() {
                cfg.dataset.kind = DatasetKind::File;
            }
        }
        if let Some(v) = self.classes {
            cfg.dataset.classes = v;
        }
        if let Some(v) = self.per_class {
            cfg.dataset.per_class = v;
        }
        if let Some(v) = self.dim {
            cfg.dataset.dim = v;
        }
        if let Some(v) = self.spread {
            cfg.dataset.spread = v;
        }
        if let Some(v) = self.noise {
            cfg.dataset.noise = v;
        }
        if let Some(v) = self.dataset_seed {
            cfg.dataset.seed = Some(v);
        }
        if self.label_last {
            cfg.dataset.label_first = false;
        }
        if self.gcn {
            cfg.dataset.gcn = true;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by the train command.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    /// Deliberately corrupt one analytic gradient (test hook).
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated beta values.
    #[arg(long = "beta-grid", value_delimiter = ',')]
    beta_grid: Option<Vec<f64>>,
    /// Comma-separated overlap values.
    #[arg(long = "k-grid", value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => commands::cmd_train(&args.common.resolve()?),
        Command::Eval(args) => commands::cmd_eval(&args.checkpoint, &args.common.resolve()?),
        Command::Gradcheck(args) => {
            commands::cmd_gradcheck(&args.common.resolve()?, args.tolerance, args.corrupt)
        }
        Command::Sweep(args) => {
            let cfg = args.common.resolve()?;
            let beta_grid = args.beta_grid.unwrap_or_else(commands::default_beta_grid);
            let k_grid = args.k_grid.unwrap_or_else(commands::default_k_grid);
            commands::cmd_sweep(&cfg, &beta_grid, &k_grid)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
