use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "a2sf",
    version,
    about = "KV-cache eviction policies: generate traces, run, sweep and compare against the ideal mask"
)]
pub struct Cli {
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic attention trace file.
    Gen(GenArgs),
    /// Evaluate one or more policies and write the per-head report.
    Run(RunArgs),
    /// Evaluate A2SF over a grid of forgetting factors and cache ratios.
    Sweep(SweepArgs),
    /// Side-by-side head-averaged comparison of several policies.
    Compare(CompareArgs),
    /// Dump the ideal mask and report the attention mass it keeps.
    Ideal(IdealArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Key/value file with `gen.*` keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub len: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Logit boost on key 0.
    #[arg(long)]
    pub sink: Option<f64>,
    /// Logit boost on the trailing keys.
    #[arg(long)]
    pub locality: Option<f64>,
    /// Number of trailing keys that get the locality boost.
    #[arg(long)]
    pub locality_window: Option<usize>,
    /// Heavy-hitter boosts as `index:strength,...`.
    #[arg(long)]
    pub hitters: Option<String>,
    /// Amplitude of the Gaussian logit noise.
    #[arg(long)]
    pub temp: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Replay,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

/// Where the attention rows come from and how the budget is set.
#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Experiment file (`key = value`); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Recorded trace file.
    #[arg(long, conflicts_with = "live")]
    pub trace: Option<PathBuf>,
    /// Decode through the toy decoder instead of reading a trace.
    #[arg(long)]
    pub live: bool,
    /// Live sequence length.
    #[arg(long)]
    pub len: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_head: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Weight seed of the toy decoder (defaults to --seed).
    #[arg(long)]
    pub decoder_seed: Option<u64>,
    /// `replay` prunes recorded rows; `live` evicts from a real cache.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Budget as a fraction of the sequence length.
    #[arg(long, conflicts_with = "budget")]
    pub cache_ratio: Option<f64>,
    /// Budget as an absolute token count.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Renormalize surviving attention after masking.
    #[arg(long, value_enum)]
    pub renormalize: Option<OnOff>,
    /// Seed echoed in reports; also seeds the live workload.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// full, local, h2o or a2sf; `a2sf:0.2` and `local:16` are accepted too.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Local window; defaults to the budget.
    #[arg(long)]
    pub window: Option<usize>,
    /// Report CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for dense 0/1 mask matrices, one file per head.
    #[arg(long)]
    pub dump_masks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// `start:stop:step` or a comma list.
    #[arg(long, default_value = "0.0:0.9:0.1")]
    pub alphas: String,
    /// `start:stop:step` or a comma list.
    #[arg(long, default_value = "0.3")]
    pub ratios: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Comma-separated policy list.
    #[arg(long)]
    pub policies: Option<String>,
    /// `ideal` or a policy whose mask serves as the reference (replay only).
    #[arg(long, default_value = "ideal")]
    pub reference: String,
    /// Required strict cosine ordering, e.g. `a2sf>h2o>local`. A bare name
    /// picks the first listed policy of that kind. Exit 1 when violated.
    #[arg(long)]
    pub assert_order: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IdealArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Kept-mass CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dump_masks: Option<PathBuf>,
}
