mod commands;
mod config;
mod error;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use xlingual_core::collection::{AnswerExtraction, PromptFormat};
use xlingual_core::consistency::{PromptVariant, TimelinessMode};
use xlingual_core::embedding::ProviderKind;

/// Cross-lingual consistency evaluation for multilingual knowledge QA.
///
/// Exit codes: 0 ok, 1 the data failed a check, 2 usage or I/O error.
#[derive(Debug, Parser)]
#[command(name = "xlingual", version)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check that a dataset is aligned across its languages.
    Validate(ValidateArgs),
    /// Ask a chat-completions endpoint every question in every language.
    Collect(CollectArgs),
    /// Embed collected answers into the cache without scoring.
    Embed(EmbedArgs),
    /// Compute xSC, xAC, xTC and xC and write the report files.
    Score(ScoreArgs),
    /// Print a saved report, optionally rewriting its CSV files.
    Report(ReportArgs),
    /// Correlate a report matrix with an external language-pair matrix.
    Correlate(CorrelateArgs),
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Dataset file (JSONL).
    dataset: PathBuf,
    /// Print the violation list as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run config file (TOML). Flags override its values.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Dataset file (JSONL).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated language subset, e.g. En,Zh,De.
    #[arg(long)]
    languages: Option<String>,
    /// Seed for exemplar sampling and the mock embedder.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CollectArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Answer store (JSONL). An existing store is resumed.
    #[arg(long)]
    answers: Option<PathBuf>,
    /// Chat-completions URL. The bearer token is read from XLINGUAL_API_KEY.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent with every request.
    #[arg(long)]
    model: Option<String>,
    /// Few-shot exemplars per prompt.
    #[arg(long)]
    shots: Option<usize>,
    /// Question wording: p1, p2, p3 or custom:<name>.
    #[arg(long)]
    variant: Option<PromptVariant>,
    /// Request shape: chat or completion.
    #[arg(long)]
    format: Option<PromptFormat>,
    /// How answers are cut from raw output: first-line, trim or verbatim.
    #[arg(long)]
    extraction: Option<AnswerExtraction>,
    /// Maximum requests in flight.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Requests per second (0 = unlimited).
    #[arg(long)]
    rate_limit: Option<f64>,
    /// Attempts per cell, including the first.
    #[arg(long)]
    max_attempts: Option<u32>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    timeout: Option<u64>,
    /// Relation templates (JSON), required by --variant p2.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Question overrides (JSONL), required by --variant p3 and custom:*.
    #[arg(long)]
    paraphrases: Option<PathBuf>,
    /// Run id recorded in the store header (derived from the settings when unset).
    #[arg(long)]
    run_id: Option<String>,
    /// Request again the cells that failed in an earlier run.
    #[arg(long)]
    retry_failed: bool,
}

#[derive(Debug, Args)]
struct EmbedFlags {
    /// Answer store (JSONL) written by `collect`.
    #[arg(long)]
    answers: Option<PathBuf>,
    /// Embedding cache file; created if missing.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Embedding provider: http, cache-only or mock.
    #[arg(long)]
    embed_provider: Option<ProviderKind>,
    /// Embedding endpoint URL. The bearer token is read from XLINGUAL_EMBED_TOKEN.
    #[arg(long)]
    embed_endpoint: Option<String>,
    /// Expected vector dimensionality.
    #[arg(long)]
    dims: Option<usize>,
    /// Texts per embedding request.
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    embed: EmbedFlags,
    /// Also embed timeliness answers.
    #[arg(long)]
    include_timeliness_in_xsc: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    embed: EmbedFlags,
    /// Output directory for report.json, matrix CSVs and domains.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Timeliness scoring: prose (best match divided by its rank) or formula (best match divided by the candidate count).
    #[arg(long)]
    xtc_mode: Option<TimelinessMode>,
    /// Best-candidate chrF below this scores 0 in xTC.
    #[arg(long)]
    tau: Option<f64>,
    /// Include timeliness answers in xSC.
    #[arg(long)]
    include_timeliness_in_xsc: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// report.json written by `score`.
    report: PathBuf,
    /// Matrices to print (xsc, xac, xtc). Repeatable; default all.
    #[arg(long)]
    metric: Vec<String>,
    /// Rewrite report.json and its CSV files into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the report JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    /// report.json written by `score`.
    report: PathBuf,
    /// External language-pair matrix (CSV), e.g. translation chrF.
    external: PathBuf,
    /// Report matrix to correlate: xsc, xac or xtc.
    #[arg(long, default_value = "xsc")]
    metric: String,
    /// Write per-language row means (scatter data) to this CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(error::EXIT_USAGE);
        }
    };
    let result = runtime.block_on(async {
        match cli.command {
            Command::Validate(args) => commands::validate(args),
            Command::Collect(args) => commands::collect(args).await,
            Command::Embed(args) => commands::embed(args).await,
            Command::Score(args) => commands::score(args).await,
            Command::Report(args) => commands::report(args),
            Command::Correlate(args) => commands::correlate(args),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
