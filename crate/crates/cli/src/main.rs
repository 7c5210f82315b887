use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Estimate the number of significant principal components of a dataset.
#[derive(Debug, Parser)]
#[command(name = "pcsig", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Preprocess a CSV file, choose q, and test the leading components.
    Analyze(AnalyzeArgs),
    /// Write synthetic datasets with a known number of dominant components.
    Synth(SynthArgs),
    /// Run the full analysis on a synthetic grid and summarize the estimates.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
struct AnalysisFlags {
    /// Significance level.
    #[arg(long, default_value_t = pcsig::sigtest::DEFAULT_ALPHA)]
    alpha: f64,
    /// Null samples drawn from the posterior.
    #[arg(long, default_value_t = pcsig::sigtest::DEFAULT_NULL_SAMPLES)]
    null_samples: usize,
    /// VBPCA iterations per fit.
    #[arg(long, default_value_t = pcsig::vbpca::DEFAULT_MAX_ITERS)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Smallest number of components tried.
    #[arg(long, default_value_t = 2)]
    q_min: usize,
    /// Largest number of components tried [default: min(n, p, 60)].
    #[arg(long)]
    q_max: Option<usize>,
    /// Columns missing more than this fraction of entries are dropped.
    #[arg(long, default_value_t = pcsig::ingest::DEFAULT_MISSING_THRESHOLD)]
    missing_threshold: f64,
    /// Worker threads [default: all cores]. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Input CSV with a header row.
    data: PathBuf,
    /// Column schema; without one every column is continuous.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Header of a column holding row labels.
    #[arg(long)]
    label_column: Option<String>,
    /// Cell values treated as missing (repeatable) [default: "" and NA].
    #[arg(long = "missing-token")]
    missing_tokens: Vec<String>,
    #[command(flatten)]
    analysis: AnalysisFlags,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Also write the processed matrix, mask and provenance log here.
    #[arg(long)]
    processed_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, requires_all = ["cols", "significant"], conflicts_with_all = ["scenario", "spec"])]
    rows: Option<usize>,
    #[arg(long, requires = "rows")]
    cols: Option<usize>,
    #[arg(long, requires = "rows")]
    significant: Option<usize>,
    /// Grid scenario: i (150 rows) or ii (150 columns).
    #[arg(long, conflicts_with = "spec")]
    scenario: Option<String>,
    #[arg(long, default_value_t = 1, requires = "scenario")]
    replicates: usize,
    /// JSON file holding one synthetic spec, as written in a manifest.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the CSV files and manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Grid scenario: i or ii.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    /// Seed for data generation; analysis uses --seed.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[command(flatten)]
    analysis: AnalysisFlags,
    /// Summary CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-run CSV of estimates.
    #[arg(long)]
    runs_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Analyze(args) => commands::analyze(args),
        Command::Synth(args) => commands::synth(args),
        Command::Validate(args) => commands::validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
