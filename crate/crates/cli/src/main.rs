//! `medeval`: run benchmarks, scan for overlap, analyse ratings and host
//! rating studies.
//!
//! Settings resolve as configuration file < `MEDEVAL_*` environment < flags.
//! Every command writes a manifest next to its output. Failures print one
//! JSON object `{"error": {"kind", "message"}}` to stderr and exit 1; usage
//! errors exit 2.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "medeval", version, about = "Evaluation harness for medical question answering models")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "MEDEVAL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a prompting strategy over a multiple-choice dataset.
    RunBenchmark(RunBenchmarkArgs),
    /// Flag questions whose text appears in a training corpus.
    ScanOverlap(ScanOverlapArgs),
    /// Bootstrap, permutation and agreement analysis of a ratings file.
    Analyze(AnalyzeArgs),
    /// Render benchmark results as a dataset-by-strategy table.
    EmitReport(EmitReportArgs),
    /// Create a rating study from a spec file.
    CreateStudy(CreateStudyArgs),
    /// Serve the rating HTTP API.
    ServeStudy(ServeStudyArgs),
    /// Export de-randomized ratings of a study.
    ExportStudy(ExportStudyArgs),
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// `mock` or `http`.
    #[arg(long, env = "MEDEVAL_BACKEND")]
    pub backend: Option<String>,
    /// JSON script for the mock backend.
    #[arg(long, env = "MEDEVAL_MOCK_SCRIPT")]
    pub mock_script: Option<PathBuf>,
    /// Endpoint of the HTTP backend. The bearer token is read from MEDEVAL_TOKEN.
    #[arg(long, env = "MEDEVAL_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Attempts per request, including the first one.
    #[arg(long)]
    pub max_attempts: Option<u32>,
    /// Requests per second across all workers.
    #[arg(long)]
    pub rate_per_second: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunBenchmarkArgs {
    /// Multiple-choice dataset (JSONL).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Dataset tag, e.g. `medqa`; selects the built-in prompts.
    #[arg(long)]
    pub tag: Option<String>,
    /// fewshot, cot, sc or er.
    #[arg(long)]
    pub strategy: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Output directory for results, report, checkpoint and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "MEDEVAL_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "MEDEVAL_PARALLELISM")]
    pub parallelism: Option<usize>,
    /// Bootstrap iterations for the accuracy interval.
    #[arg(long, env = "MEDEVAL_ITERATIONS")]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub sc_samples: Option<usize>,
    #[arg(long)]
    pub er_stage1: Option<usize>,
    #[arg(long)]
    pub er_stage2: Option<usize>,
    #[arg(long)]
    pub stage1_temperature: Option<f64>,
    #[arg(long)]
    pub stage2_temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Exemplar set file replacing the built-in one.
    #[arg(long)]
    pub exemplars: Option<PathBuf>,
    /// Labelled questions (JSONL) to draw random few-shot exemplars from.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Discard an existing checkpoint instead of resuming from it.
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Debug, Args)]
pub struct ScanOverlapArgs {
    /// Directory, file list, or `.lpc` length-prefixed file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub tag: String,
    /// Window threshold in characters; repeat for a sensitivity analysis.
    #[arg(long = "min-len")]
    pub min_len: Vec<usize>,
    /// Benchmark results.json supplying per-question correctness.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Report path; the structured report goes to `{report}.json`.
    #[arg(long)]
    pub report: PathBuf,
    /// tsv or md.
    #[arg(long, default_value = "tsv")]
    pub format: String,
    /// Query with the question stem only.
    #[arg(long)]
    pub exclude_context: bool,
    /// Collapse whitespace runs in corpus and queries.
    #[arg(long)]
    pub collapse_whitespace: bool,
    #[arg(long)]
    pub gram: Option<usize>,
    #[arg(long)]
    pub max_doc_chars: Option<usize>,
    #[arg(long, env = "MEDEVAL_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "MEDEVAL_ITERATIONS")]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ratings: PathBuf,
    /// Expected design; the file's own design is used when omitted.
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long, env = "MEDEVAL_ITERATIONS")]
    pub iterations: Option<usize>,
    #[arg(long, env = "MEDEVAL_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub level: Option<f64>,
    /// auto, on or off.
    #[arg(long)]
    pub single_rating: Option<String>,
    /// tsv, md or json.
    #[arg(long, default_value = "tsv")]
    pub format: String,
    /// Defaults to `{ratings stem}.analysis.{format}` beside the ratings file.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmitReportArgs {
    /// results.json files written by run-benchmark.
    #[arg(long, required = true, num_args = 1..)]
    pub results: Vec<PathBuf>,
    /// tsv, md or json.
    #[arg(long, default_value = "tsv")]
    pub format: String,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    /// Study store directory.
    #[arg(long, env = "MEDEVAL_STUDY_STORE")]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CreateStudyArgs {
    /// Study spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct ServeStudyArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Token file: `{"raters": {token: rater}, "admins": [token]}`.
    #[arg(long, env = "MEDEVAL_STUDY_TOKENS")]
    pub tokens: Option<PathBuf>,
    #[arg(long, env = "MEDEVAL_STUDY_ADDR")]
    pub addr: Option<String>,
    /// Snapshot after this many writes; 0 disables compaction.
    #[arg(long)]
    pub compact_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportStudyArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub study: String,
    /// json or csv.
    #[arg(long, default_value = "json")]
    pub format: String,
    #[arg(long)]
    pub output: PathBuf,
}

/// A usage error: exit status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return "usage";
        } else if cause.is::<medeval::dataset::DatasetError>() {
            return "dataset";
        } else if cause.is::<medeval::benchmark::BenchmarkError>() {
            return "benchmark";
        } else if cause.is::<medeval::overlap::OverlapError>() {
            return "overlap";
        } else if cause.is::<medeval::stats::StatsError>() {
            return "stats";
        } else if cause.is::<medeval::study::StudyError>() {
            return "study";
        } else if cause.is::<medeval::prompting::PromptError>() {
            return "prompt";
        } else if cause.is::<toml::de::Error>() {
            return "config";
        } else if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "error"
}

fn report(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({"error": {"kind": kind, "message": message}}));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.render().to_string().trim_end());
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MEDEVAL_LOG", level)).init();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = kind(&e);
            report(kind, &format!("{e:#}"));
            ExitCode::from(if kind == "usage" { 2 } else { 1 })
        }
    }
}
