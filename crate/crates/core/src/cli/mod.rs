//! The `dfm` command line: data generation, clustering, training, sampling,
//! evaluation and cost queries. Every command writes a manifest that
//! `dfm replay` can rerun.

mod commands;
pub mod manifest;
pub mod overlay;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

pub use manifest::{FileHash, Manifest, RunRecord};

#[derive(Debug, Parser)]
#[command(name = "dfm", version, about = "Decentralized flow matching at desk scale")]
pub struct Cli {
    /// Settings file (`key = value` lines or a JSON object); flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset CSV.
    GenData(GenDataArgs),
    /// Partition a dataset into K clusters.
    Cluster(ClusterArgs),
    /// Train experts, a router, a monolith or a distilled student.
    Train(TrainArgs),
    /// Draw samples from an ensemble under a selection strategy.
    Sample(SampleArgs),
    /// Run an experiment suite, or score a sample file against a reference.
    Eval(EvalArgs),
    /// Print per-step sampling cost of each strategy.
    Flops(FlopsArgs),
    /// Rerun a command from its manifest and check the outputs match.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// blobs, moons, spiral or checkerboard.
    #[arg(long)]
    pub shape: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long)]
    pub seed: u64,
    /// Number of blobs (blobs only).
    #[arg(long)]
    pub k_true: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub std: Option<f64>,
    /// Noise level for moons and spiral.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Fine centroids of the first stage.
    #[arg(long, default_value_t = crate::partition::DEFAULT_FINE_CENTROIDS)]
    pub m: usize,
    /// feature-kmeans or random.
    #[arg(long, default_value = "feature-kmeans")]
    pub mode: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Directory for `assignment.csv`, `partition.json` and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

/// Optimizer and network settings shared by training and evaluation.
#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = crate::training::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = crate::training::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = crate::training::DEFAULT_EMA_DECAY)]
    pub ema_decay: f64,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub hidden: Vec<usize>,
    /// tanh or silu.
    #[arg(long, default_value = "tanh")]
    pub activation: String,
    #[arg(long, default_value_t = crate::numerics::DEFAULT_TIME_FEATURES)]
    pub time_features: usize,
    #[arg(long, default_value_t = crate::flow::DEFAULT_T_MIN)]
    pub t_min: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// expert, router, monolith or distill.
    #[arg(long, required_unless_present = "decentralized", conflicts_with = "decentralized")]
    pub role: Option<String>,
    /// Train every expert and the router, each in isolation.
    #[arg(long)]
    pub decentralized: bool,
    /// Run decentralized workers on their own threads.
    #[arg(long, requires = "decentralized")]
    pub threads: bool,
    /// Expert index for `--role expert`.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of experts; taken from the partition file when omitted.
    #[arg(long)]
    pub experts: Option<usize>,
    #[arg(long)]
    pub data: PathBuf,
    /// Assignment CSV from `dfm cluster`.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Run directory; outputs go to its checkpoints/ and metrics/.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// linear or cosine.
    #[arg(long)]
    pub schedule: String,
    #[arg(long, default_value_t = 2000)]
    pub steps: u64,
    #[arg(long, default_value_t = 100)]
    pub report_every: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Fault injection: worker to abort, as `expert-<i>` or `router`.
    #[arg(long, hide = true, requires = "fail_at")]
    pub fail_worker: Option<String>,
    #[arg(long, hide = true)]
    pub fail_at: Option<u64>,
}

/// Strategy flags, named after the strategy-cost table rows.
#[derive(Debug, Args)]
pub struct StrategyArgs {
    /// full, top-<n>, sample-<n>, nucleus, threshold, oracle or monolith.
    #[arg(long)]
    pub strategy: String,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Number of experts in the ensemble.
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub schedule: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    /// Cluster labels for the oracle strategy (assignment CSV); trajectory
    /// `i` uses row `i` modulo the file length.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = crate::ensemble::sampler::DEFAULT_SAMPLING_STEPS)]
    pub steps: usize,
    /// euler or heun.
    #[arg(long, default_value = "euler")]
    pub integrator: String,
    #[arg(long, default_value_t = crate::flow::DEFAULT_T_MIN)]
    pub t_min: f64,
    /// Use exact flows of `--data` partitioned by `--partition` instead of
    /// checkpoints.
    #[arg(long, requires_all = ["data", "partition"])]
    pub analytical: bool,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Also write every trajectory state.
    #[arg(long)]
    pub trajectories: bool,
    /// Output stem under samples/; defaults to the strategy name.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// ddm_vs_monolith, expert_count_sweep, cluster_ablation,
    /// distill_compare or strategy_table.
    #[arg(long, conflicts_with_all = ["samples", "reference"], required_unless_present = "samples")]
    pub experiment: Option<String>,
    /// Generated samples CSV to score directly.
    #[arg(long, requires = "reference")]
    pub samples: Option<PathBuf>,
    /// Reference dataset or samples CSV.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub run: PathBuf,
    /// Seeds, comma separated; the experiment is repeated for each.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    #[arg(long, required_unless_present = "samples")]
    pub schedule: Option<String>,
    /// Experts per ensemble.
    #[arg(long, required_unless_present = "samples")]
    pub k: Option<usize>,
    /// K values of the expert-count sweep.
    #[arg(long, value_delimiter = ',')]
    pub sweep_k: Option<Vec<usize>>,
    #[arg(long)]
    pub analytical: bool,
    /// train, load or reuse checkpoints under the run directory.
    #[arg(long, default_value = "train")]
    pub source: String,
    /// Write SVG scatter plots per arm.
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub threads: bool,
    #[arg(long)]
    pub n_data: Option<usize>,
    #[arg(long)]
    pub train_steps: Option<u64>,
    #[arg(long)]
    pub distill_steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub ema_decay: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Sampler steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long, default_value_t = crate::eval::experiments::DEFAULT_N_PROJECTIONS)]
    pub n_projections: usize,
    /// Report stem for direct scoring.
    #[arg(long, default_value = "direct")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub expert_gflops: u64,
    #[arg(long)]
    pub router_gflops: u64,
    #[arg(long)]
    pub k: usize,
    /// Print every row of the strategy-cost table (the default without
    /// `--strategy`).
    #[arg(long)]
    pub table1: bool,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Also write `reports/flops.csv` and a manifest here.
    #[arg(long)]
    pub run: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Run the CLI on `argv` (program name first) and return the exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let argv = match overlay::apply_config(argv) {
        Ok(a) => a,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Error::Usage(String::new()).exit_code() } else { 0 };
        }
    };
    match execute(cli.command, &argv[1..]) {
        Ok(()) => 0,
        Err(e) => report(e),
    }
}

fn report(e: Error) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

/// Run a parsed command and write its manifest. `argv` is the resolved
/// argument list without the program name.
pub fn execute(command: Command, argv: &[String]) -> Result<()> {
    dispatch(command, argv, true)
}

fn dispatch(command: Command, argv: &[String], write_manifest: bool) -> Result<()> {
    let mut rec = RunRecord::default();
    let (name, manifest_path) = match &command {
        Command::Replay(a) => return commands::replay(&a.manifest),
        Command::GenData(a) => ("gen-data", commands::gen_data(a, &mut rec)?),
        Command::Cluster(a) => ("cluster", commands::cluster(a, &mut rec)?),
        Command::Train(a) => ("train", commands::train(a, &mut rec)?),
        Command::Sample(a) => ("sample", commands::sample(a, &mut rec)?),
        Command::Eval(a) => ("eval", commands::eval(a, &mut rec)?),
        Command::Flops(a) => ("flops", commands::flops(a, &mut rec)?),
    };
    if let Some(path) = manifest_path.filter(|_| write_manifest) {
        rec.into_manifest(name, argv)?.save(&path)?;
    }
    Ok(())
}
