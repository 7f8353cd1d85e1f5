//! The `mseg` command line: synthetic cohort generation, stratified
//! splitting, training, inference, evaluation and reporting.
//!
//! Exit codes are 0 on success, 1 for validation errors (bad flags, config
//! or inputs) and 2 for failures while running.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mseg_core::cohort::Split;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mseg", version, about = "Brain lesion detection and segmentation on multi-sequence MRI volumes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom cohort and its manifest.
    GenCohort(GenCohortArgs),
    /// Assign train/dev/test splits, stratified by lesion-count subgroup.
    Split(SplitArgs),
    /// Train a network on the train split.
    Train(TrainArgs),
    /// Write probability maps (and optional overlays) for studies.
    Infer(InferArgs),
    /// Score probability maps against ground truth.
    Evaluate(EvaluateArgs),
    /// Summary and p-value tables from evaluation output.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenCohortArgs {
    #[arg(long, default_value_t = 10)]
    pub n_per_group: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Volume size as NXxNYxNZ, e.g. 64x64x32.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub test_per_group: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of the non-test cases held out for development.
    #[arg(long, default_value_t = mseg_core::cohort::DEV_FRACTION)]
    pub dev_fraction: f64,
    /// Where to write the split manifest; defaults to updating it in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint with its stored configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long)]
    pub slab_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitSel {
    Train,
    Dev,
    Test,
    All,
}

impl SplitSel {
    pub fn matches(self, split: Option<Split>) -> bool {
        match self {
            SplitSel::Train => split == Some(Split::Train),
            SplitSel::Dev => split == Some(Split::Dev),
            SplitSel::Test => split == Some(Split::Test),
            SplitSel::All => true,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A single study directory; needs --out-prob.
    #[arg(long, requires = "out_prob", conflicts_with = "manifest")]
    pub study: Option<PathBuf>,
    #[arg(long)]
    pub out_prob: Option<PathBuf>,
    /// Batch mode over a manifest split; needs --out-dir.
    #[arg(long, requires = "out_dir")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitSel::All)]
    pub split: SplitSel,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write one PPM overlay per slice here.
    #[arg(long)]
    pub overlay_dir: Option<PathBuf>,
    #[arg(long, default_value_t = mseg_core::io::OVERLAY_THRESHOLD)]
    pub overlay_threshold: f32,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of `<study_id>.msvol` probability maps.
    #[arg(long)]
    pub probs_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitSel::Test)]
    pub split: SplitSel,
    #[arg(long, conflicts_with = "calibrate_dev")]
    pub threshold: Option<f64>,
    /// Use the mean dev-split Youden threshold (the default without --threshold).
    #[arg(long)]
    pub calibrate_dev: bool,
    /// 6 or 26.
    #[arg(long)]
    pub connectivity: Option<u32>,
    #[arg(long)]
    pub min_mm3: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub evals: PathBuf,
    /// Output directory for report.json and report.txt.
    #[arg(long)]
    pub out: PathBuf,
}

/// Sizes the rayon pool from `MSEG_THREADS` (0 or unset = automatic).
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("MSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Validation(format!("MSEG_THREADS must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        // A pool that already exists keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::GenCohort(a) => commands::gen_cohort(&a).map(|_| ()),
        Command::Split(a) => commands::split(&a).map(|_| ()),
        Command::Train(a) => commands::train(&a).map(|_| ()),
        Command::Infer(a) => commands::infer(&a).map(|_| ()),
        Command::Evaluate(a) => commands::evaluate(&a).map(|_| ()),
        Command::Report(a) => commands::report(&a).map(|_| ()),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Validation(e.to_string()))?;
    run(cli)
}

pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
