//! The `hykey` command line: data generation, training, evaluation and
//! match inspection.
//!
//! Each subcommand resolves its settings from an optional JSON/TOML file,
//! then `HYKEY_SEED`/`HYKEY_THREADS`, then flags, and writes the resolved
//! settings into every artifact it produces.

mod commands;
pub mod config;
pub mod render;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    EvalRunConfig, GenDataConfig, GroundTruth, MatchOutput, MatchRecord, MatchRunConfig,
    TrainRunConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "hykey",
    version,
    about = "Hyperspectral keypoint detection, description and matching"
)]
pub struct Cli {
    /// JSON or TOML file with the subcommand's settings.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed; beats the config file and HYKEY_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-item work; beats the config file and HYKEY_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of cubes and a manifest.
    GenData(GenDataArgs),
    /// Train a model and write a JSONL log and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset; writes JSON, CSV and SVG.
    Eval(EvalArgs),
    /// Match two cubes and render the correspondences.
    Match(MatchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataMode {
    Planar,
    Epipolar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchmarkMode {
    Homography,
    Pose,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub mode: Option<DataMode>,
    /// Number of triplets.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Identity warps without photometric jitter (planar self-pairs).
    #[arg(long)]
    pub identity: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Train without the epipolar term.
    #[arg(long)]
    pub no_pe: bool,
    /// Dataset directory; repeat for several. Replaces `datasets` from the config.
    #[arg(long = "data", value_name = "DIR")]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub mode: Option<BenchmarkMode>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Keypoints per image [default: 1024].
    #[arg(long)]
    pub max_kpts: Option<usize>,
    /// Report path; the CSV and SVG go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_name = "CUBE")]
    pub a: Option<PathBuf>,
    #[arg(long, value_name = "CUBE")]
    pub b: Option<PathBuf>,
    /// SVG path; the JSON match list goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth geometry (JSON) to colour matches by correctness.
    #[arg(long, value_name = "FILE")]
    pub gt: Option<PathBuf>,
    /// Keypoints per image [default: 1024].
    #[arg(long)]
    pub max_kpts: Option<usize>,
}

/// Runs a parsed command line. `env` looks up environment variables.
pub fn run(cli: &Cli, env: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => commands::gen_data(cli, a, env),
        Command::Train(a) => commands::train(cli, a, env),
        Command::Eval(a) => commands::eval(cli, a, env),
        Command::Match(a) => commands::match_pair(cli, a, env),
    }
}

/// Parses `args` (program name first) and runs; errors are printed and
/// mapped to exit code 1, usage errors to 2.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli, &|k| std::env::var(k).ok()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Writes through a sibling temporary file and renames, so a reader never
/// sees a partial artifact.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = partial_path(path);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

pub(crate) fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Maps `f` over `items` on up to `threads` scoped workers. Results keep the
/// input order, so output does not depend on the thread count.
pub(crate) fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync,
{
    let workers = threads.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}
