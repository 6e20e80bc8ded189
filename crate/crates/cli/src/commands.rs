use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use medeval::backends::{Backend, Client, HttpBackend, MockBackend, MockScript, RetryPolicy, TokenBucket, TOKEN_ENV};
use medeval::benchmark::{emit_report, run_benchmark, BenchmarkConfig, BenchmarkResult, ReportFormat};
use medeval::dataset::{load_mcq_dataset, load_mcq_dataset_split, DatasetTag, Split};
use medeval::overlap::{
    build_corpus_index, load_corpus, overlap_report, render_markdown, render_tsv, scan, IndexConfig, IndexStats,
    Normalization, OverlapReport, OverlapVerdict, QueryOptions, DEFAULT_GRAM, DEFAULT_MAX_DOC_CHARS, DEFAULT_MIN_LEN,
};
use medeval::prompting::{Exemplar, ExemplarSet, PromptSpec, Strategy, Templates};
use medeval::stats::{analyze, AnalyzeConfig, BootstrapConfig, Design, RatingsFile, StatsError};
use medeval::study::{StudyError, StudyService, StudySpec, StudyStore};
use medeval_server::{AppState, Tokens};
use serde::Serialize;

use crate::config::{pick, require, FileConfig};
use crate::manifest::{beside, Manifest};
use crate::{
    AnalyzeArgs, BackendArgs, Cli, Command, CreateStudyArgs, EmitReportArgs, ExportStudyArgs, RunBenchmarkArgs,
    ScanOverlapArgs, ServeStudyArgs, StoreArgs, Usage,
};

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::RunBenchmark(a) => run_benchmark_cmd(a, &file),
        Command::ScanOverlap(a) => scan_overlap(a, &file),
        Command::Analyze(a) => analyze_cmd(a, &file),
        Command::EmitReport(a) => emit_report_cmd(a),
        Command::CreateStudy(a) => create_study(a, &file),
        Command::ServeStudy(a) => serve_study(a, &file),
        Command::ExportStudy(a) => export_study(a, &file),
    }
}

fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(message.into()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn json_pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    text
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

#[derive(Debug, Serialize)]
struct BackendConfig {
    kind: String,
    mock_script: Option<PathBuf>,
    endpoint: Option<String>,
    timeout_secs: u64,
    max_attempts: u32,
    rate_per_second: Option<f64>,
}

impl BackendConfig {
    fn resolve(a: BackendArgs, file: &FileConfig) -> anyhow::Result<Self> {
        let f = &file.backend;
        let kind = require(a.backend, f.kind.clone(), "--backend (mock or http)")?;
        let cfg = BackendConfig {
            kind,
            mock_script: a.mock_script.or_else(|| f.mock_script.clone()),
            endpoint: a.endpoint.or_else(|| f.endpoint.clone()),
            timeout_secs: pick(a.timeout_secs, f.timeout_secs, 120),
            max_attempts: pick(a.max_attempts, f.max_attempts, 3),
            rate_per_second: a.rate_per_second.or(f.rate_per_second),
        };
        match cfg.kind.as_str() {
            "mock" if cfg.mock_script.is_none() => Err(usage("the mock backend needs --mock-script")),
            "http" if cfg.endpoint.is_none() => Err(usage("the http backend needs --endpoint or MEDEVAL_ENDPOINT")),
            "mock" | "http" => Ok(cfg),
            other => Err(usage(format!("unknown backend {other:?} (expected mock or http)"))),
        }
    }

    fn client(&self, parallelism: usize) -> anyhow::Result<Client> {
        let backend: Arc<dyn Backend> = match (self.kind.as_str(), &self.mock_script, &self.endpoint) {
            ("mock", Some(script), _) => Arc::new(MockBackend::new(MockScript::from_file(script).map_err(|e| anyhow!(e))?)),
            (_, _, Some(endpoint)) => {
                let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
                Arc::new(HttpBackend::with_timeout(endpoint.clone(), token, Duration::from_secs(self.timeout_secs)))
            }
            _ => unreachable!("validated in resolve"),
        };
        let retry = RetryPolicy { max_attempts: self.max_attempts.max(1), ..RetryPolicy::default() };
        let mut client = Client::new(backend).with_retry(retry).with_parallelism(parallelism);
        if let Some(rate) = self.rate_per_second {
            if !(rate > 0.0) {
                return Err(usage("--rate-per-second must be positive"));
            }
            client = client.with_rate_limit(TokenBucket::new(rate.ceil() as u32, rate));
        }
        Ok(client)
    }
}

#[derive(Debug, Serialize)]
struct BenchmarkRun {
    dataset: PathBuf,
    tag: String,
    strategy: Strategy,
    backend: BackendConfig,
    out: PathBuf,
    seed: u64,
    parallelism: usize,
    iterations: usize,
    level: f64,
    sc_samples: usize,
    er_stage1: usize,
    er_stage2: usize,
    stage1_temperature: f64,
    stage2_temperature: f64,
    max_tokens: u32,
    exemplars: Option<PathBuf>,
    pool: Option<PathBuf>,
    templates: Option<PathBuf>,
}

fn run_benchmark_cmd(a: RunBenchmarkArgs, file: &FileConfig) -> anyhow::Result<()> {
    let b = &file.benchmark;
    let strategy: Strategy = require(a.strategy, b.strategy.clone(), "--strategy")?.parse().map_err(usage)?;
    let base = PromptSpec::new(strategy, "", Vec::new());
    let run = BenchmarkRun {
        dataset: require(a.dataset, b.dataset.clone(), "--dataset")?,
        tag: require(a.tag, b.tag.clone(), "--tag")?,
        strategy,
        backend: BackendConfig::resolve(a.backend, file)?,
        out: require(a.out, b.out.clone(), "--out")?,
        seed: pick(a.seed, file.seed, 0),
        parallelism: pick(a.parallelism, b.parallelism, 4).max(1),
        iterations: pick(a.iterations, b.iterations, 10_000),
        level: pick(a.level, b.level, 0.95),
        sc_samples: pick(a.sc_samples, b.sc_samples, base.sc_samples),
        er_stage1: pick(a.er_stage1, b.er_stage1, base.er_stage1),
        er_stage2: pick(a.er_stage2, b.er_stage2, base.er_stage2),
        stage1_temperature: pick(a.stage1_temperature, b.stage1_temperature, base.stage1_temperature),
        stage2_temperature: pick(a.stage2_temperature, b.stage2_temperature, base.stage2_temperature),
        max_tokens: pick(a.max_tokens, b.max_tokens, base.max_tokens),
        exemplars: a.exemplars.or_else(|| b.exemplars.clone()),
        pool: a.pool.or_else(|| b.pool.clone()),
        templates: a.templates.or_else(|| b.templates.clone()),
    };
    let tag = DatasetTag::new(&run.tag);
    let dataset = load_mcq_dataset(&run.dataset, &tag)?;
    log::info!("loaded {} questions from {}", dataset.len(), run.dataset.display());

    let mut spec = match PromptSpec::for_dataset(&run.tag, strategy) {
        Ok(spec) => spec,
        Err(e) if run.exemplars.is_none() => return Err(e.into()),
        Err(_) => base,
    };
    if let Some(path) = &run.exemplars {
        let set = ExemplarSet::from_file(path)?;
        spec.instructions = set.instructions;
        spec.exemplars = set.exemplars;
        if set.shots.is_some() {
            spec.random_shots = set.shots;
        }
    }
    if let Some(path) = &run.pool {
        let pool = load_mcq_dataset_split(path, &tag, Split::Train)?;
        spec = spec.with_pool(pool.items.iter().map(Exemplar::from_question).collect());
    }
    if let Some(dir) = &run.templates {
        spec.templates = Templates::from_dir(dir)?;
    }
    spec.sc_samples = run.sc_samples;
    spec.er_stage1 = run.er_stage1;
    spec.er_stage2 = run.er_stage2;
    spec.stage1_temperature = run.stage1_temperature;
    spec.stage2_temperature = run.stage2_temperature;
    spec.max_tokens = run.max_tokens;
    spec = spec.with_seed(run.seed);
    spec.validate()?;

    std::fs::create_dir_all(&run.out).with_context(|| format!("cannot create {}", run.out.display()))?;
    let checkpoint = run.out.join("checkpoint.jsonl");
    if a.fresh && checkpoint.exists() {
        std::fs::remove_file(&checkpoint).with_context(|| format!("cannot remove {}", checkpoint.display()))?;
    }
    let client = run.backend.client(run.parallelism)?;
    let cfg = BenchmarkConfig {
        parallelism: run.parallelism,
        bootstrap: BootstrapConfig { iterations: run.iterations, level: run.level, seed: run.seed },
        checkpoint: Some(checkpoint),
    };
    let result = run_benchmark(&tag, &dataset.items, &spec, &client, &cfg)?;
    log::info!("{}/{} correct, {} errored", result.correct, result.total, result.errored);

    let results_path = run.out.join("results.json");
    let report_path = run.out.join("report.tsv");
    write(&results_path, &json_pretty(&result))?;
    write(&report_path, &emit_report(std::slice::from_ref(&result), ReportFormat::Tsv)?)?;
    let inputs: Vec<&PathBuf> =
        [Some(&run.dataset), run.backend.mock_script.as_ref(), run.exemplars.as_ref(), run.pool.as_ref()].into_iter().flatten().collect();
    let manifest_path = run.out.join("manifest.json");
    Manifest::new("run-benchmark", &run)
        .seed("prompting", run.seed)
        .seed("bootstrap", run.seed)
        .inputs(inputs)?
        .output(&results_path)?
        .output(&report_path)?
        .write(&manifest_path)
}

fn read_results(path: &Path) -> anyhow::Result<BenchmarkResult> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid results file {}", path.display()))
}

#[derive(Debug, Serialize)]
struct OverlapRun {
    corpus: PathBuf,
    dataset: PathBuf,
    tag: String,
    results: Option<PathBuf>,
    min_len: Vec<usize>,
    gram: usize,
    max_doc_chars: usize,
    include_context: bool,
    collapse_whitespace: bool,
    seed: u64,
    iterations: usize,
    report: PathBuf,
    format: String,
}

#[derive(Debug, Serialize)]
struct OverlapThreshold {
    min_len: usize,
    report: OverlapReport,
    verdicts: Vec<OverlapVerdict>,
}

#[derive(Debug, Serialize)]
struct OverlapOutput {
    index: IndexStats,
    thresholds: Vec<OverlapThreshold>,
}

fn scan_overlap(a: ScanOverlapArgs, file: &FileConfig) -> anyhow::Result<()> {
    let o = &file.overlap;
    let min_len = if a.min_len.is_empty() { o.min_len.clone().unwrap_or_else(|| vec![DEFAULT_MIN_LEN]) } else { a.min_len };
    if min_len.iter().any(|&l| l == 0) {
        return Err(usage("--min-len must be positive"));
    }
    if !matches!(a.format.as_str(), "tsv" | "md" | "markdown") {
        return Err(usage(format!("unknown report format {:?} (expected tsv or md)", a.format)));
    }
    let smallest = *min_len.iter().min().expect("non-empty");
    let run = OverlapRun {
        corpus: require(a.corpus, o.corpus.clone(), "--corpus")?,
        dataset: a.dataset,
        tag: a.tag,
        results: a.results,
        gram: pick(a.gram, o.gram, DEFAULT_GRAM.min(smallest)),
        min_len,
        max_doc_chars: pick(a.max_doc_chars, o.max_doc_chars, DEFAULT_MAX_DOC_CHARS),
        include_context: !a.exclude_context && o.include_context.unwrap_or(true),
        collapse_whitespace: a.collapse_whitespace || o.collapse_whitespace.unwrap_or(false),
        seed: pick(a.seed, file.seed, 0),
        iterations: pick(a.iterations, o.iterations, 10_000),
        report: a.report,
        format: a.format,
    };
    let dataset = load_mcq_dataset(&run.dataset, &DatasetTag::new(&run.tag))?;
    let correct: Option<BTreeMap<String, bool>> = match &run.results {
        Some(p) => Some(read_results(p)?.records.into_iter().map(|r| (r.id, r.correct)).collect()),
        None => None,
    };
    let normalization = if run.collapse_whitespace { Normalization::CollapseWhitespace } else { Normalization::Newlines };
    let index = build_corpus_index(
        load_corpus(&run.corpus)?,
        IndexConfig { gram: run.gram, max_doc_chars: run.max_doc_chars, normalization },
    )?;
    let stats = index.stats();
    log::info!("indexed {} documents, {} characters", stats.documents, stats.characters);

    let bootstrap = BootstrapConfig { iterations: run.iterations, level: 0.95, seed: run.seed };
    let mut thresholds = Vec::new();
    for &l in &run.min_len {
        let verdicts = scan(&dataset.items, &index, &QueryOptions { min_len: l, include_context: run.include_context });
        let report = match &correct {
            Some(c) => overlap_report(&run.tag, &verdicts, c, l, &bootstrap)?,
            None => OverlapReport {
                dataset: run.tag.clone(),
                min_len: l,
                total: verdicts.len(),
                overlapping: verdicts.iter().filter(|v| v.overlapping).count(),
                without_overlap: None,
                with_overlap: None,
                delta: None,
            },
        };
        thresholds.push(OverlapThreshold { min_len: l, report, verdicts });
    }
    let reports: Vec<OverlapReport> = thresholds.iter().map(|t| t.report.clone()).collect();
    let text = if run.format == "tsv" { render_tsv(&reports) } else { render_markdown(&reports) };
    let structured = with_suffix(&run.report, ".json");
    write(&run.report, &text)?;
    write(&structured, &json_pretty(&OverlapOutput { index: stats, thresholds }))?;
    let inputs: Vec<&PathBuf> = [Some(&run.dataset), run.results.as_ref()].into_iter().flatten().collect();
    let mut manifest = Manifest::new("scan-overlap", &run).seed("bootstrap", run.seed).inputs(inputs)?;
    if run.corpus.is_file() {
        manifest = manifest.input(&run.corpus)?;
    }
    manifest.output(&run.report)?.output(&structured)?.write(&beside(&run.report))
}

#[derive(Debug, Serialize)]
struct AnalyzeRun {
    ratings: PathBuf,
    design: Design,
    iterations: usize,
    level: f64,
    seed: u64,
    single_rating: String,
    format: String,
    output: PathBuf,
}

fn analyze_cmd(a: AnalyzeArgs, file: &FileConfig) -> anyhow::Result<()> {
    let s = &file.analyze;
    let ext = match a.format.as_str() {
        "tsv" => "tsv",
        "md" | "markdown" => "md",
        "json" => "json",
        other => return Err(usage(format!("unknown format {other:?} (expected tsv, md or json)"))),
    };
    let single_rating = pick(a.single_rating, s.single_rating.clone(), "auto".into());
    let single = match single_rating.as_str() {
        "auto" => None,
        "on" => Some(true),
        "off" => Some(false),
        other => return Err(usage(format!("--single-rating must be auto, on or off, not {other:?}"))),
    };
    let expected: Option<Design> = a.design.map(|d| d.parse().map_err(usage)).transpose()?;
    let ratings = RatingsFile::from_path(&a.ratings)?;
    if let Some(d) = expected {
        if d != ratings.design {
            return Err(StatsError::Ratings(format!("{} holds a {} study, not {d}", a.ratings.display(), ratings.design)).into());
        }
    }
    let output = a.output.unwrap_or_else(|| {
        let stem = a.ratings.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "ratings".into());
        a.ratings.with_file_name(format!("{stem}.analysis.{ext}"))
    });
    let run = AnalyzeRun {
        ratings: a.ratings,
        design: ratings.design,
        iterations: pick(a.iterations, s.iterations, 10_000),
        level: pick(a.level, s.level, 0.95),
        seed: pick(a.seed, file.seed, 0),
        single_rating,
        format: ext.into(),
        output,
    };
    let cfg = AnalyzeConfig { iterations: run.iterations, level: run.level, seed: run.seed, single_rating: single };
    let report = analyze(&ratings, &cfg)?;
    let text = match ext {
        "tsv" => report.to_tsv(),
        "md" => report.to_markdown(),
        _ => report.to_json(),
    };
    write(&run.output, &text)?;
    Manifest::new("analyze", &run)
        .seed("analysis", run.seed)
        .input(&run.ratings)?
        .output(&run.output)?
        .write(&beside(&run.output))
}

#[derive(Debug, Serialize)]
struct EmitRun<'a> {
    results: &'a [PathBuf],
    format: &'a str,
    output: &'a Path,
}

fn emit_report_cmd(a: EmitReportArgs) -> anyhow::Result<()> {
    let format: ReportFormat = a.format.parse().map_err(usage)?;
    let results = a.results.iter().map(|p| read_results(p)).collect::<anyhow::Result<Vec<_>>>()?;
    write(&a.output, &emit_report(&results, format)?)?;
    let run = EmitRun { results: &a.results, format: &a.format, output: &a.output };
    Manifest::new("emit-report", &run).inputs(&a.results)?.output(&a.output)?.write(&beside(&a.output))
}

fn store_dir(a: StoreArgs, file: &FileConfig) -> anyhow::Result<PathBuf> {
    require(a.store, file.study.store.clone(), "--store (or MEDEVAL_STUDY_STORE)")
}

#[derive(Debug, Serialize)]
struct CreateRun<'a> {
    spec: &'a Path,
    store: &'a Path,
    study: &'a str,
}

fn create_study(a: CreateStudyArgs, file: &FileConfig) -> anyhow::Result<()> {
    let store = store_dir(a.store, file)?;
    let text = std::fs::read_to_string(&a.spec).with_context(|| format!("cannot read {}", a.spec.display()))?;
    let spec: StudySpec = serde_json::from_str(&text).with_context(|| format!("invalid study spec {}", a.spec.display()))?;
    let id = spec.id.clone();
    let seed = spec.seed;
    let summary = StudyService::open(&store)?.create(spec)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    let run = CreateRun { spec: &a.spec, store: &store, study: &id };
    Manifest::new("create-study", &run)
        .seed("assignment", seed)
        .input(&a.spec)?
        .write(&store.join(format!("{id}.create.manifest.json")))
}

#[derive(Debug, Serialize)]
struct ServeRun {
    store: PathBuf,
    tokens: PathBuf,
    addr: String,
    compact_every: usize,
}

fn serve_study(a: ServeStudyArgs, file: &FileConfig) -> anyhow::Result<()> {
    let s = &file.study;
    let run = ServeRun {
        store: store_dir(a.store, file)?,
        tokens: require(a.tokens, s.tokens.clone(), "--tokens (or MEDEVAL_STUDY_TOKENS)")?,
        addr: pick(a.addr, s.addr.clone(), "127.0.0.1:8080".into()),
        compact_every: pick(a.compact_every, s.compact_every, 1000),
    };
    let addr = run.addr.parse().map_err(|e| usage(format!("invalid --addr {:?}: {e}", run.addr)))?;
    let tokens = Tokens::from_path(&run.tokens).map_err(|e| anyhow!(e))?;
    let service = StudyService::open(&run.store)?.with_compaction(run.compact_every);
    log::info!("loaded studies: {}", service.study_ids().join(", "));
    Manifest::new("serve-study", &run).input(&run.tokens)?.write(&run.store.join("serve.manifest.json"))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().context("cannot start runtime")?;
    runtime.block_on(medeval_server::serve(addr, AppState::new(service, tokens))).context("server failed")
}

#[derive(Debug, Serialize)]
struct ExportRun<'a> {
    store: &'a Path,
    study: &'a str,
    format: &'a str,
    output: &'a Path,
}

fn export_study(a: ExportStudyArgs, file: &FileConfig) -> anyhow::Result<()> {
    let store = store_dir(a.store, file)?;
    if !store.is_dir() {
        return Err(StudyError::Storage(format!("{}: no such study store", store.display())).into());
    }
    let study = StudyStore::open(&store)?.load(&a.study)?;
    let text = match a.format.as_str() {
        "json" => study.export().to_json() + "\n",
        "csv" => study.export_csv(),
        other => return Err(usage(format!("unknown export format {other:?} (expected json or csv)"))),
    };
    write(&a.output, &text)?;
    let run = ExportRun { store: &store, study: &a.study, format: &a.format, output: &a.output };
    Manifest::new("export-study", &run).output(&a.output)?.write(&beside(&a.output))
}
