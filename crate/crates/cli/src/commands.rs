use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::Serialize;

use cqa_core::ablation::{self, AblationError};
use cqa_core::corpus::{load_corpus, write_corpus, Corpus, CorpusError};
use cqa_core::dataset::{build_dataset, DatasetError, DatasetSplits, SplitSpec};
use cqa_core::eval::{self, EvalError, Metric, MetricReport, SignificanceResult};
use cqa_core::protocol::{HttpScorer, ScorerServer};
use cqa_core::rerank::{rerank_all, CorpusLookup, RerankConfig, RerankError};
use cqa_core::retrieval::{retrieve_all, Bm25Params, FirstStage, LmdParams, QueryComposition, RetrievalError};
use cqa_core::scorer::{mock_scorer, RelevanceScorer, ScorerError, DEFAULT_BATCH_SIZE};
use cqa_core::structured::{build_input, AblationSpec, Field, InputFormat, InputOptions, StructuredError};
use cqa_core::text_index::{IndexError, InvertedIndex};
use cqa_core::trec::{self, Qrels, Run, TrecError};
use cqa_core::{conformance, Question};

use crate::config::{self, ConfigError, PipelineConfig};
use crate::{
    AblateArgs, BuildDatasetArgs, CheckScorerArgs, Cli, Command, EvaluateArgs, IndexArgs, QuestionSelection, RenderArgs,
    RerankArgs, RetrieveArgs, ScorerArgs, ServeMockArgs,
};

/// Exit status for each failure class.
pub mod exit {
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 64;
    pub const DATA: u8 = 65;
    pub const NO_INPUT: u8 = 66;
    pub const UNAVAILABLE: u8 = 69;
    pub const IO: u8 = 74;
    pub const PROTOCOL: u8 = 76;
    pub const CONFIG: u8 = 78;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("input {0} does not exist")]
    NoInput(PathBuf),
    #[error("{0}")]
    Invalid(String),
    #[error("{0} conformance check(s) failed")]
    Conformance(usize),
}

fn is_io<E: std::error::Error + 'static>(e: &E) -> bool {
    e.source().is_some_and(|s| s.is::<std::io::Error>())
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.chain().find_map(|c| c.downcast_ref::<ScorerError>()) {
        return if e.is_retryable() { exit::UNAVAILABLE } else { exit::PROTOCOL };
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Missing(_) | CliError::Invalid(_) => exit::USAGE,
                CliError::NoInput(_) => exit::NO_INPUT,
                CliError::Conformance(_) => exit::PROTOCOL,
            };
        }
        if cause.is::<ConfigError>() {
            return exit::CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            return if is_io(e) { exit::IO } else { exit::DATA };
        }
        if let Some(e) = cause.downcast_ref::<TrecError>() {
            return if is_io(e) { exit::IO } else { exit::DATA };
        }
        if let Some(e) = cause.downcast_ref::<IndexError>() {
            return if is_io(e) { exit::IO } else { exit::DATA };
        }
        if let Some(EvalError::InvalidCorrection(_)) = cause.downcast_ref::<EvalError>() {
            return exit::USAGE;
        }
        if cause.is::<DatasetError>()
            || cause.is::<EvalError>()
            || cause.is::<StructuredError>()
            || cause.is::<RetrievalError>()
            || cause.is::<RerankError>()
            || cause.is::<AblationError>()
        {
            return exit::DATA;
        }
        if cause.is::<std::io::Error>() {
            return exit::IO;
        }
    }
    exit::FAILURE
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::BuildDataset(args) => build_dataset_cmd(args),
        Command::Index(args) => index_cmd(args, &cfg),
        Command::Retrieve(args) => retrieve_cmd(args, &cfg),
        Command::Rerank(args) => rerank_cmd(args, &cfg),
        Command::Evaluate(args) => evaluate_cmd(args, &cfg),
        Command::Ablate(args) => ablate_cmd(args, &cfg),
        Command::Render(args) => render_cmd(args, &cfg),
        Command::ServeMock(args) => serve_mock_cmd(args),
        Command::CheckScorer(args) => check_scorer_cmd(args, &cfg),
    }
}

fn input(path: &Path) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::NoInput(path.to_path_buf()))
    }
}

fn pick<T: Clone>(flag: Option<T>, configured: &Option<T>, what: &'static str) -> Result<T, CliError> {
    flag.or_else(|| configured.clone()).ok_or(CliError::Missing(what))
}

fn corpus_dir(flag: Option<PathBuf>, cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    input(&pick(flag, &cfg.paths.corpus, "--corpus (or [paths].corpus)")?)
}

fn load(dir: &Path) -> Result<Corpus> {
    let corpus = load_corpus(dir)?;
    let (q, a, j) = corpus.counts();
    log::info!("loaded {q} questions, {a} answers, {j} judgments from {}", dir.display());
    Ok(corpus)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Parses a comma-separated option value; failures are usage errors.
fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: T::Err| CliError::Invalid(e.to_string())))
        .collect()
}

fn parse_opt<T: std::str::FromStr>(text: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    text.parse().map_err(|e: T::Err| CliError::Invalid(e.to_string()))
}

fn metrics(flag: Option<String>, cfg: &config::Eval, default: Vec<Metric>) -> Result<Vec<Metric>> {
    let parsed = match (flag, &cfg.metrics) {
        (Some(list), _) => parse_list(&list)?,
        (None, Some(list)) => list.iter().map(|m| parse_opt(m)).collect::<Result<_, _>>()?,
        (None, None) => default,
    };
    if parsed.is_empty() {
        return Err(CliError::Invalid("no metrics selected".into()).into());
    }
    Ok(parsed)
}

/// Question ids of the selected split, or `None` for all questions.
fn selected_ids(sel: &QuestionSelection, cfg: &PipelineConfig) -> Result<Option<Vec<String>>> {
    if sel.split == "all" {
        return Ok(None);
    }
    let path = input(&pick(sel.splits.clone(), &cfg.paths.splits, "--splits (or [paths].splits)")?)?;
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let splits: DatasetSplits =
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let ids = splits
        .get(&sel.split)
        .ok_or_else(|| CliError::Invalid(format!("unknown split `{}` (expected train, validation, test or all)", sel.split)))?;
    Ok(Some(ids.to_vec()))
}

fn build_dataset_cmd(args: BuildDatasetArgs) -> Result<()> {
    let raw = load(&input(&args.input)?)?;
    let percents: Vec<u64> =
        parse_list(&args.split).map_err(|_| CliError::Invalid(format!("--split `{}` is not three integers", args.split)))?;
    let [train, validation, test] = percents[..] else {
        return Err(CliError::Invalid(format!("--split `{}` must list three percentages", args.split)).into());
    };
    let spec = SplitSpec::from_percentages(train, validation, test)?;
    let built = build_dataset(&raw, args.threshold, &spec)?;

    write_corpus(&built.corpus, &args.output)?;
    let mut splits = serde_json::to_string_pretty(&built.splits)?;
    splits.push('\n');
    write_text(&args.output.join("splits.json"), &splits)?;
    let mut pairs = String::new();
    for p in &built.duplicate_pairs {
        pairs.push_str(&format!("{}\t{}\t{:.4}\n", p.first, p.second, p.ratio));
    }
    write_text(&args.output.join("duplicates.tsv"), &pairs)?;

    let (q, a, j) = built.corpus.counts();
    let (tr, va, te) = built.splits.sizes();
    println!(
        "questions {q} (removed {}), answers {a}, judgments {j}, duplicate pairs {}, splits {tr}/{va}/{te}",
        raw.questions.len() - q,
        built.duplicate_pairs.len()
    );
    Ok(())
}

fn index_cmd(args: IndexArgs, cfg: &PipelineConfig) -> Result<()> {
    let corpus = load(&corpus_dir(args.corpus, cfg)?)?;
    let output = pick(args.output, &cfg.paths.index, "--output (or [paths].index)")?;
    let index = InvertedIndex::build(&corpus.answers)?;
    index.save(&output)?;
    println!(
        "indexed {} answers, {} terms, {} tokens",
        index.doc_count(),
        index.terms().count(),
        index.collection_length()
    );
    Ok(())
}

fn retrieve_cmd(args: RetrieveArgs, cfg: &PipelineConfig) -> Result<()> {
    let corpus = load(&corpus_dir(args.corpus, cfg)?)?;
    let index = match args.index.or_else(|| cfg.paths.index.clone()) {
        Some(path) => InvertedIndex::load(&input(&path)?)?,
        None => InvertedIndex::build(&corpus.answers)?,
    };
    let r = &cfg.retrieval;
    let model = args.model.or_else(|| r.model.clone()).unwrap_or_else(|| "bm25".into());
    let stage = match model.as_str() {
        "bm25" => {
            let d = Bm25Params::default();
            FirstStage::Bm25(Bm25Params::new(args.k1.or(r.k1).unwrap_or(d.k1), args.b.or(r.b).unwrap_or(d.b))?)
        }
        "lmd" => FirstStage::Lmd(LmdParams::new(args.mu.or(r.mu).unwrap_or(LmdParams::default().mu))?),
        other => return Err(CliError::Invalid(format!("unknown model `{other}` (expected bm25 or lmd)")).into()),
    };
    let k = args.k.or(r.k).unwrap_or(1000);
    let fields: Vec<Field> = parse_list(&args.fields)?;
    let composition = QueryComposition {
        subject: fields.contains(&Field::Subject),
        description: fields.contains(&Field::Description),
        tags: fields.contains(&Field::Tags),
    };

    let questions: Vec<&Question> = match selected_ids(&args.selection, cfg)? {
        None => corpus.questions.iter().collect(),
        Some(ids) => {
            let by_id = corpus.question_map();
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| CliError::Invalid(format!("split lists unknown question `{id}`")))
                })
                .collect::<Result<_, _>>()?
        }
    };
    let lists = retrieve_all(&questions, &index, &stage, &composition, k)?;
    let run: Run = lists.into_iter().map(|l| (l.question_id.clone(), l)).collect();
    let tag = args.tag.unwrap_or_else(|| stage.name().to_string());
    trec::write_run(&args.output, run.values(), &tag)?;
    log::info!("wrote {} ranked lists to {}", run.len(), args.output.display());
    Ok(())
}

fn scorer(args: &ScorerArgs, cfg: &config::Scorer) -> Result<(Box<dyn RelevanceScorer>, usize)> {
    let batch = args.batch_size.or(cfg.batch_size).unwrap_or(DEFAULT_BATCH_SIZE);
    if batch == 0 {
        return Err(CliError::Invalid("batch size must be positive".into()).into());
    }
    if let Some(kind) = args.mock {
        return Ok((mock_scorer(kind, batch), batch));
    }
    let endpoint = pick(
        args.endpoint.clone(),
        &cfg.endpoint,
        "scorer: pass --endpoint, set CQA_SCORER_ENDPOINT or [scorer].endpoint, or use --mock",
    )?;
    let retries = args.retries.or(cfg.retries).unwrap_or(2);
    let timeout = Duration::from_secs(args.timeout_secs.or(cfg.timeout_secs).unwrap_or(120));
    let client = HttpScorer::new(&endpoint)
        .with_timeout(timeout)
        .with_retries(retries, Duration::from_millis(250))
        .with_max_batch(batch);
    Ok((Box::new(client), batch))
}

fn input_options(format: &str, drop: &str, cat_without_tags: bool) -> Result<InputOptions> {
    let format: InputFormat = parse_opt(format)?;
    let ablation: AblationSpec = parse_opt(drop)?;
    if format == InputFormat::Cat && !ablation.is_empty() {
        return Err(CliError::Invalid("--drop applies to the fs format only".into()).into());
    }
    Ok(InputOptions {
        format,
        ablation,
        cat_includes_tags: !cat_without_tags,
    })
}

fn rerank_cmd(args: RerankArgs, cfg: &PipelineConfig) -> Result<()> {
    let corpus = load(&corpus_dir(args.corpus, cfg)?)?;
    let (run, _) = trec::read_run(&input(&args.run)?)?;
    let (scorer, batch_size) = scorer(&args.scorer, &cfg.scorer)?;
    let config = RerankConfig {
        input: input_options(&args.format, &args.drop, args.cat_without_tags)?,
        batch_size,
    };
    let lists: Vec<_> = run.into_values().collect();
    let reranked = rerank_all(&lists, &CorpusLookup::new(&corpus), scorer.as_ref(), &config)?;
    let tag = args.tag.unwrap_or_else(|| config.run_tag());
    trec::write_run(&args.output, &reranked, &tag)?;
    log::info!("re-ranked {} lists into {}", reranked.len(), args.output.display());
    Ok(())
}

fn qrels(flag: Option<PathBuf>, sel: &QuestionSelection, cfg: &PipelineConfig) -> Result<Qrels> {
    let path = input(&pick(flag, &cfg.paths.qrels, "--qrels (or [paths].qrels)")?)?;
    restrict(trec::read_qrels(&path)?, sel, cfg)
}

fn restrict(qrels: Qrels, sel: &QuestionSelection, cfg: &PipelineConfig) -> Result<Qrels> {
    Ok(match selected_ids(sel, cfg)? {
        Some(ids) => trec::restrict_qrels(&qrels, &ids),
        None => qrels,
    })
}

#[derive(Serialize)]
struct SystemReport<'a> {
    name: &'a str,
    reports: &'a [MetricReport],
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    systems: Vec<SystemReport<'a>>,
    significance: &'a [SignificanceResult],
}

fn evaluate_cmd(args: EvaluateArgs, cfg: &PipelineConfig) -> Result<()> {
    let qrels = qrels(args.qrels, &args.selection, cfg)?;
    let metrics = metrics(args.metrics, &cfg.eval, Metric::standard_suite())?;
    let mut systems: Vec<(String, Vec<MetricReport>)> = Vec::new();
    for spec in &args.runs {
        let (name, path) = match spec.split_once('=') {
            Some((name, path)) => (name.to_string(), PathBuf::from(path)),
            None => {
                let path = PathBuf::from(spec);
                let name = path.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned());
                (name, path)
            }
        };
        if systems.iter().any(|(n, _)| *n == name) {
            return Err(CliError::Invalid(format!("two runs are named `{name}`; use name=path")).into());
        }
        let (run, _) = trec::read_run(&input(&path)?)?;
        let reports = eval::evaluate_run(&run, &qrels, &metrics).with_context(|| format!("evaluating {}", path.display()))?;
        systems.push((name, reports));
    }

    let significance = if systems.len() >= 2 {
        let m = args
            .comparisons
            .ok_or(CliError::Missing("--comparisons (the Bonferroni m) when comparing runs"))?;
        let alpha = args.alpha.or(cfg.eval.alpha).unwrap_or(0.001);
        eval::compare_systems(&systems, alpha, m)?
    } else {
        Vec::new()
    };

    let mut out = std::io::stdout().lock();
    write!(out, "{}", eval::format_table(&systems))?;
    if !significance.is_empty() {
        write!(out, "\n{}", eval::format_significance(&significance))?;
    }
    if let Some(path) = args.json {
        let report = EvaluationReport {
            systems: systems
                .iter()
                .map(|(name, reports)| SystemReport { name, reports })
                .collect(),
            significance: &significance,
        };
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_text(&path, &json)?;
    }
    Ok(())
}

fn ablate_cmd(args: AblateArgs, cfg: &PipelineConfig) -> Result<()> {
    let corpus = load(&corpus_dir(args.corpus, cfg)?)?;
    let qrels = match args.qrels.or_else(|| cfg.paths.qrels.clone()) {
        Some(path) => restrict(trec::read_qrels(&input(&path)?)?, &args.selection, cfg)?,
        None => restrict(trec::qrels_from_corpus(&corpus), &args.selection, cfg)?,
    };
    let (run, _) = trec::read_run(&input(&args.run)?)?;
    let (scorer, batch_size) = scorer(&args.scorer, &cfg.scorer)?;
    let metrics = metrics(args.metrics, &cfg.eval, ablation::default_metrics())?;
    let report = ablation::ablate(&run, &CorpusLookup::new(&corpus), &qrels, scorer.as_ref(), batch_size, &metrics)?;

    print!("{}", report.table());
    if let Some(dir) = args.run_dir {
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for row in &report.rows {
            let tag = RerankConfig::new(InputOptions::fs(row.ablation.clone())).run_tag();
            trec::write_run(&dir.join(format!("{tag}.run")), &row.run, &tag)?;
        }
    }
    if let Some(path) = args.json {
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_text(&path, &json)?;
    }
    Ok(())
}

fn render_cmd(args: RenderArgs, cfg: &PipelineConfig) -> Result<()> {
    let corpus = load(&corpus_dir(args.corpus, cfg)?)?;
    let question = corpus
        .question(&args.question)
        .ok_or_else(|| CliError::Invalid(format!("unknown question `{}`", args.question)))?;
    let answers = corpus.answer_map();
    let answer_id = match args.answer {
        Some(id) => id,
        None => corpus
            .judgments
            .iter()
            .find(|j| j.question_id == question.id)
            .map(|j| j.best_answer_id.clone())
            .or_else(|| corpus.answers.iter().find(|a| a.question_id == question.id).map(|a| a.id.clone()))
            .ok_or_else(|| CliError::Invalid(format!("question `{}` has no answers", question.id)))?,
    };
    let answer = answers
        .get(answer_id.as_str())
        .ok_or_else(|| CliError::Invalid(format!("unknown answer `{answer_id}`")))?;
    let options = input_options(&args.format, &args.drop, args.cat_without_tags)?;
    let rendered = build_input(question, &answer.text, &options)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rendered)?);
    } else if args.model_tokens {
        println!("{}", rendered.render_with_model_tokens());
    } else {
        println!("query:  {}", rendered.render_query());
        println!("answer: {}", rendered.answer_text);
    }
    Ok(())
}

fn serve_mock_cmd(args: ServeMockArgs) -> Result<()> {
    let scorer = mock_scorer(args.kind, args.max_batch);
    let server = ScorerServer::spawn(&args.addr, scorer.into()).map_err(|e| anyhow::anyhow!("cannot bind {}: {e}", args.addr))?;
    println!("listening on {}", server.url());
    std::io::stdout().flush()?;
    server.wait();
    Ok(())
}

fn check_scorer_cmd(args: CheckScorerArgs, cfg: &PipelineConfig) -> Result<()> {
    let (scorer, _) = scorer(&args.scorer, &cfg.scorer)?;
    let results = conformance::run(scorer.as_ref());
    let mut failed = 0;
    for r in &results {
        if r.passed {
            println!("PASS {}", r.name);
        } else {
            failed += 1;
            println!("FAIL {}: {}", r.name, r.detail);
        }
    }
    if failed > 0 {
        return Err(CliError::Conformance(failed).into());
    }
    Ok(())
}

