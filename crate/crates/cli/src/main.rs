mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cqa_core::scorer::MockKind;

/// Answer retrieval pipeline for legal community question answering.
#[derive(Debug, Parser)]
#[command(name = "cqa", version, propagate_version = true)]
pub struct Cli {
    /// TOML file supplying defaults for paths, retrieval, scorer and eval.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deduplicate raw questions, select best answers and split chronologically.
    BuildDataset(BuildDatasetArgs),
    /// Build the inverted index over a corpus's answers.
    Index(IndexArgs),
    /// First-stage BM25 or LMD retrieval into a TREC run.
    Retrieve(RetrieveArgs),
    /// Re-rank a TREC run with a relevance scorer.
    Rerank(RerankArgs),
    /// Score runs against qrels, with pairwise significance tests.
    Evaluate(EvaluateArgs),
    /// Re-rank and evaluate each single-segment drop of the fs layout.
    Ablate(AblateArgs),
    /// Print the re-ranker input for a question and answer.
    Render(RenderArgs),
    /// Serve a deterministic mock scorer over the scoring protocol.
    ServeMock(ServeMockArgs),
    /// Run the scorer conformance checks against a service or mock.
    CheckScorer(CheckScorerArgs),
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// Directory with raw questions.jsonl and answers.jsonl.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for the corpus, qrels, splits and duplicate log.
    #[arg(long)]
    pub output: PathBuf,
    /// Similarity ratio (percent) that must be exceeded to merge questions.
    #[arg(long, default_value_t = cqa_core::dataset::DEFAULT_DUPLICATE_THRESHOLD)]
    pub threshold: f64,
    /// Train, validation and test percentages.
    #[arg(long, default_value = "70,10,20")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuestionSelection {
    /// Splits file written by build-dataset.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// train, validation, test or all.
    #[arg(long, default_value = "all")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Saved index; built in memory when omitted.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// bm25 or lmd.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Candidates per question.
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Question fields forming the query, e.g. `S,D,T`.
    #[arg(long, default_value = "S,D,T")]
    pub fields: String,
    #[command(flatten)]
    pub selection: QuestionSelection,
    #[arg(long)]
    pub output: PathBuf,
    /// Run tag; defaults to the model name.
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScorerArgs {
    /// Scoring service root URL.
    #[arg(long, env = "CQA_SCORER_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Use a built-in mock instead of a service: answer-length, tag-overlap,
    /// term-overlap or constant.
    #[arg(long)]
    pub mock: Option<MockKind>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub retries: Option<u32>,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// First-stage TREC run.
    #[arg(long)]
    pub run: PathBuf,
    /// fs or cat.
    #[arg(long, default_value = "fs")]
    pub format: String,
    /// Segments to drop from the fs layout, e.g. `T` or `S,D`.
    #[arg(long, default_value = "")]
    pub drop: String,
    /// Leave tags out of the cat layout.
    #[arg(long)]
    pub cat_without_tags: bool,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Run files, optionally `name=path`; repeatable.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    /// Comma-separated metrics, e.g. `MAP@1k,R@1k,R@10`.
    #[arg(long)]
    pub metrics: Option<String>,
    #[command(flatten)]
    pub selection: QuestionSelection,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of comparisons for the Bonferroni correction; required with
    /// two or more runs.
    #[arg(long)]
    pub comparisons: Option<usize>,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[command(flatten)]
    pub selection: QuestionSelection,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Directory for the re-ranked run of every variant.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub question: String,
    /// Defaults to the judged best answer, else the first answer.
    #[arg(long)]
    pub answer: Option<String>,
    #[arg(long, default_value = "fs")]
    pub format: String,
    #[arg(long, default_value = "")]
    pub drop: String,
    #[arg(long)]
    pub cat_without_tags: bool,
    /// Wrap with the encoder's classification and separator tokens.
    #[arg(long)]
    pub model_tokens: bool,
    /// Print the structured input as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeMockArgs {
    #[arg(long, default_value = "tag-overlap")]
    pub kind: MockKind,
    #[arg(long, default_value = "127.0.0.1:8600")]
    pub addr: String,
    #[arg(long, default_value_t = cqa_core::scorer::DEFAULT_BATCH_SIZE)]
    pub max_batch: usize,
}

#[derive(Debug, Args)]
pub struct CheckScorerArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
