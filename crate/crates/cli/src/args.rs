//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use irrgn::{Ablation, ArcMode};

use crate::commands::SweepAxis;

#[derive(Debug, Parser)]
#[command(name = "irrgn", version, about = "Train and inspect relational reasoning models for response selection")]
#[command(after_help = "Any configuration field can also be set with a dotted flag, e.g. --model.d 64 or --train.lr=5e-4.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and keep the checkpoint with the best validation R4@1.
    Train(ConfigArgs),
    /// Score a checkpoint on a dataset (hard arc mode).
    Eval(EvalArgs),
    /// Write option attention maps and arc types for one example.
    Dump(DumpArgs),
    /// Train one model per number of arc types or graph layers.
    Sweep(SweepArgs),
    /// Write the synthetic corpus as JSON lines.
    GenData(ConfigArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling and synthetic data.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Arc mode used for training.
    #[arg(long)]
    pub mode: Option<ArcMode>,
    #[arg(long)]
    pub arc_types: Option<usize>,
    #[arg(long)]
    pub rgcn_layers: Option<usize>,
    #[arg(long)]
    pub no_odc_before: bool,
    #[arg(long)]
    pub no_odc_after: bool,
    #[arg(long)]
    pub no_urr: bool,
    /// Named variant: full, no-odc-after, no-odc-before, no-odc, no-urr, no-all (or "w/o ALL" style labels).
    #[arg(long)]
    pub ablate: Option<Ablation>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint to load instead of the run's best one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// MuTual-format data; defaults to the run's validation split.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Example id to dump.
    #[arg(long, required_unless_present = "self_attention")]
    pub id: Option<String>,
    /// Instead of one example, write the gold option's self-attention before
    /// and after reasoning for every example.
    #[arg(long)]
    pub self_attention: bool,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `T` (arc types) or `l` (graph layers).
    #[arg(long)]
    pub axis: SweepAxis,
    /// Comma-separated values; defaults to 4..=12 for T and 1..=4 for l.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}
