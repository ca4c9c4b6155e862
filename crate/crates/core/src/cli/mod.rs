//! The `incorl` command-line front end.
//!
//! Every command reads its inputs once, records their SHA-256 digests and
//! the resolved settings in a `<out>.manifest` file next to its output, and
//! exits with 0 on success, 2 on a usage or validation failure and 3 when a
//! run aborts.

mod commands;
mod manifest;
mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::resolve_indices;
pub use manifest::RunManifest;
pub use settings::RunConfig;

use crate::baselines::Method;
use crate::error::Error;
use crate::eval::PromptRule;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ABORT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "incorl", version, about = "In-context voxelwise encoding models")]
pub struct Cli {
    /// Worker threads for data-parallel work; outputs do not depend on it.
    #[arg(long, global = true, env = "INCORL_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a VXED dataset from whitespace-delimited text matrices.
    Import(ImportArgs),
    /// Build a prompt bank from per-category text matrices of embeddings.
    ImportPrompts(ImportPromptsArgs),
    /// Write a synthetic VXED dataset with planted linear voxels.
    Synth(SynthArgs),
    /// Stage 1: train on synthetic tasks at a fixed context size.
    Pretrain(PretrainArgs),
    /// Stage 2: continue synthetic training over a range of context sizes.
    Extend(ExtendArgs),
    /// Stage 3: train on recorded voxel responses.
    Finetune(FinetuneArgs),
    /// Emit per-voxel encoder weights from a support set.
    Predict(PredictArgs),
    /// Score the model and baselines on held-out stimuli.
    Eval(EvalArgs),
    /// Project prompt embeddings through voxel weights.
    Query(QueryArgs),
    /// Rank support stimuli by final-layer attention.
    Attn(AttnArgs),
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub subject: String,
    /// `[S x E]` stimulus embeddings.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// `[V x S]` voxel responses.
    #[arg(long)]
    pub betas: PathBuf,
    /// One ncsnr value per voxel.
    #[arg(long)]
    pub ncsnr: Option<PathBuf>,
    /// One ROI label index per voxel.
    #[arg(long, requires = "roi_legend")]
    pub roi: Option<PathBuf>,
    /// ROI names, indexed by the labels.
    #[arg(long, value_delimiter = ',', requires = "roi")]
    pub roi_legend: Option<Vec<String>>,
    /// Named stimulus list stored in the manifest, e.g. `test=900..1000`.
    #[arg(long)]
    pub shared: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportPromptsArgs {
    /// `name=path` of an `[n x E]` text matrix; repeat once per category.
    #[arg(long, required = true)]
    pub category: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 500)]
    pub stimuli: usize,
    #[arg(long, default_value_t = 100)]
    pub voxels: usize,
    /// Noise standard deviation, `x` or `lo..hi`.
    #[arg(long, default_value = "1")]
    pub noise: String,
    #[arg(long, default_value_t = 1.0)]
    pub weight_norm: f64,
    /// Planted categories (0 for unstructured weights).
    #[arg(long, default_value_t = 0)]
    pub categories: usize,
    #[arg(long, default_value_t = 0.25)]
    pub prototype_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synth")]
    pub subject: String,
    #[arg(long)]
    pub shared: Vec<String>,
    /// Also write the category prototypes as a prompt bank.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Start from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtendArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub init: PathBuf,
    /// Keep voxels with ncsnr strictly above this value.
    #[arg(long)]
    pub ncsnr_min: Option<f64>,
    /// Stimuli excluded from training, `shared:<name>` or an index list.
    #[arg(long)]
    pub test_indices: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(short = 'p', long)]
    pub support_size: Option<usize>,
    /// Held-out stimuli, `shared:<name>` or an index list.
    #[arg(long, conflicts_with = "query")]
    pub test_indices: Option<String>,
    /// `[n x E]` text matrix of query embeddings.
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// Explicit support stimuli instead of a seeded draw.
    #[arg(long)]
    pub support: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write predicted responses for the test stimuli or query rows here.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Weight table output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, value_delimiter = ',')]
    pub baselines: Vec<Method>,
    /// Support sizes for the baselines (default: `--sizes`).
    #[arg(long, value_delimiter = ',')]
    pub baseline_sizes: Option<Vec<usize>>,
    /// Test stimuli (default: a seeded 20% split).
    #[arg(long)]
    pub test_indices: Option<String>,
    #[arg(long)]
    pub ncsnr_min: Option<f64>,
    /// Ridge penalty grid.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Weight table written by `predict`.
    #[arg(long, conflicts_with_all = ["ckpt", "data"])]
    pub weights: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, requires = "ckpt")]
    pub data: Option<PathBuf>,
    #[arg(short = 'p', long)]
    pub support_size: Option<usize>,
    #[arg(long)]
    pub test_indices: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub prompts: PathBuf,
    /// Append the per-ROI fraction table.
    #[arg(long)]
    pub roi_report: bool,
    #[arg(long, default_value = "first")]
    pub rule: PromptRule,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', conflicts_with = "roi")]
    pub voxel: Option<Vec<usize>>,
    #[arg(long)]
    pub roi: Option<String>,
    #[arg(short = 'p', long)]
    pub support_size: Option<usize>,
    #[arg(short = 'k', long)]
    pub k: usize,
    #[arg(long)]
    pub test_indices: Option<String>,
    #[arg(long)]
    pub support: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_runtime_abort() {
        EXIT_ABORT
    } else {
        EXIT_USAGE
    }
}

fn configure_workers(workers: Option<usize>) -> crate::Result<()> {
    let Some(n) = workers else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("--workers must be positive".into()));
    }
    // a pool may already exist when several commands run in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: &Cli) -> crate::Result<()> {
    configure_workers(cli.workers)?;
    match &cli.command {
        Command::Import(a) => commands::import(a),
        Command::ImportPrompts(a) => commands::import_prompts(a),
        Command::Synth(a) => commands::synth(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Extend(a) => commands::extend(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Query(a) => commands::query(a),
        Command::Attn(a) => commands::attn(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
