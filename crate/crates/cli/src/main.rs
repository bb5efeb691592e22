mod config;
mod provenance;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use d2qmm_core::corpus_io::{
    load_corpus, load_qrels, load_queries, load_scores, load_topics, read_run, write_queries_jsonl,
    write_run, write_scores_jsonl, CorpusFormat,
};
use d2qmm_core::eval::{
    budget_entries, budget_report, evaluate_run, paired_t_test, read_budget_csv, sweep,
    write_budget_csv, write_plot_data, write_sweep_csv, EvalOptions, LatencyProtocol, SweepConfig,
};
use d2qmm_core::expansion::{dedup_queries, generate_all};
use d2qmm_core::filtering::{read_expanded_jsonl, write_expanded_jsonl};
use d2qmm_core::fixture::{DemoFixture, FixtureConfig};
use d2qmm_core::pipeline::{filter_with_sheet, retrieve, RetrievalSettings};
use d2qmm_core::{
    build_index, external_scorer, file_generator, lexical_scorer, mock_generator, score_all,
    Corpus, Diagnostics, ExpandedDocument, FilterConfig, InvertedIndex, MockGeneratorConfig,
    QueryGenerator, RelevanceScorer,
};

use config::Settings;
use provenance::{recorded_tokenizer, write_timing, Provenance};

/// Relevance-filtered document expansion: generate, score, filter, index,
/// search and evaluate.
#[derive(Parser, Debug)]
#[command(name = "d2qmm", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by all commands. Each may also come from the config file.
#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` config file [env: D2QMM_CONFIG]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<String>,
    #[arg(long, global = true)]
    queries: Option<String>,
    #[arg(long, global = true)]
    scores: Option<String>,
    #[arg(long, global = true)]
    topics: Option<String>,
    #[arg(long, global = true)]
    qrels: Option<String>,
    /// Index directory.
    #[arg(long, global = true)]
    index: Option<String>,
    /// Expanded corpus (JSONL) produced by `filter`.
    #[arg(long, global = true)]
    expanded: Option<String>,
    /// Mock generator config (JSON) used instead of a query file.
    #[arg(long, global = true)]
    mock: Option<String>,
    /// Queries per document.
    #[arg(long, global = true)]
    n: Option<String>,
    /// Proportion of scored pairs to retain.
    #[arg(long, global = true)]
    p: Option<String>,
    /// Explicit score threshold; overrides `p`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    t: Option<String>,
    #[arg(long, global = true)]
    k1: Option<String>,
    #[arg(long, global = true)]
    b: Option<String>,
    /// `on`, `off` or a stopword list file.
    #[arg(long, global = true)]
    stopwords: Option<String>,
    /// `on` or `off`.
    #[arg(long, global = true)]
    stem: Option<String>,
    #[arg(long, global = true)]
    block_size: Option<String>,
    /// Retrieval depth.
    #[arg(long, global = true)]
    k: Option<String>,
    #[arg(long, global = true)]
    threads: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    /// Run tag written in the last column of run files.
    #[arg(long, global = true)]
    tag: Option<String>,
}

impl Common {
    fn overrides(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("corpus", &self.corpus),
            ("queries", &self.queries),
            ("scores", &self.scores),
            ("topics", &self.topics),
            ("qrels", &self.qrels),
            ("index", &self.index),
            ("expanded", &self.expanded),
            ("mock", &self.mock),
            ("n", &self.n),
            ("p", &self.p),
            ("t", &self.t),
            ("k1", &self.k1),
            ("b", &self.b),
            ("stopwords", &self.stopwords),
            ("stem", &self.stem),
            ("block_size", &self.block_size),
            ("k", &self.k),
            ("threads", &self.threads),
            ("seed", &self.seed),
            ("out", &self.out),
            ("tag", &self.tag),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write `n` generated queries per document (from a query file or the mock generator).
    Expand,
    /// Score every (document, query) pair with the lexical scorer.
    Score,
    /// Keep queries scoring at least the threshold and write the expanded corpus.
    Filter {
        /// Drop repeated retained query strings within a document.
        #[arg(long)]
        dedup: bool,
    },
    /// Build a BM25 index from an expanded corpus (or a plain corpus).
    Index,
    /// Retrieve the top `k` documents for every topic.
    Search,
    /// Compute RR@10 and nDCG@10 for a run; optionally compare against a baseline run.
    Evaluate {
        /// Run file to evaluate.
        #[arg(long)]
        run: PathBuf,
        /// Second run for a paired t-test on per-query RR@10.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Minimum grade counted as relevant by RR@10.
        #[arg(long, default_value_t = 1)]
        rel_threshold: u32,
        /// Compare runs built under different tokenizer configurations.
        #[arg(long)]
        force: bool,
    },
    /// Run the pipeline over a grid of `n` and `p` values.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        n_values: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        p_values: Vec<f64>,
        /// Also measure mean response time per cell.
        #[arg(long)]
        latency: bool,
    },
    /// Pair filtered configurations with unfiltered ones of similar total compute.
    Budget {
        /// CSV with columns n,p,generation_secs,filtering_secs,rr_at_10.
        #[arg(long)]
        input: PathBuf,
    },
    /// Write the deterministic synthetic collection used by the tests.
    DemoFixture {
        #[arg(long)]
        docs: Option<usize>,
        #[arg(long = "topic-count")]
        topic_count: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Expand => "expand",
            Command::Score => "score",
            Command::Filter { .. } => "filter",
            Command::Index => "index",
            Command::Search => "search",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::Budget { .. } => "budget",
            Command::DemoFixture { .. } => "demo-fixture",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            emit_error(None, "usage", &e.render().to_string());
            return ExitCode::from(2);
        }
    };
    let command = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<d2qmm_core::Error>()
                .map_or("error", d2qmm_core::Error::kind);
            emit_error(Some(command), kind, &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

/// One JSON object on the last line of stderr.
fn emit_error(command: Option<&str>, kind: &str, message: &str) {
    let record = json!({ "error": { "command": command, "kind": kind, "message": message.trim_end() } });
    eprintln!("{record}");
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.common.config.as_deref(), cli.common.overrides())?;
    if let Some(threads) = settings.parsed::<usize>("threads")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let command = cli.command.name();
    match cli.command {
        Command::Expand => expand(&settings),
        Command::Score => score(&settings),
        Command::Filter { dedup } => filter(&settings, dedup),
        Command::Index => index(&settings),
        Command::Search => search(&settings),
        Command::Evaluate {
            run,
            baseline,
            rel_threshold,
            force,
        } => evaluate(&settings, &run, baseline.as_deref(), rel_threshold, force),
        Command::Sweep {
            n_values,
            p_values,
            latency,
        } => run_sweep(&settings, command, n_values, p_values, latency),
        Command::Budget { input } => budget(&settings, &input),
        Command::DemoFixture { docs, topic_count } => demo_fixture(&settings, docs, topic_count),
    }
}

fn load_corpus_setting(settings: &Settings) -> Result<(PathBuf, Corpus)> {
    let path = settings.path("corpus")?;
    let corpus = load_corpus(&path, CorpusFormat::from_path(&path))?;
    info!("loaded {} documents from {}", corpus.len(), path.display());
    Ok((path, corpus))
}

fn report_diagnostics(diagnostics: &Diagnostics) {
    for d in diagnostics.entries() {
        warn!("{} ({}): {}", d.code, d.count, d.message);
    }
}

/// Generator named by the settings: a query file, or the mock generator.
fn generator(settings: &Settings, n: usize) -> Result<(Box<dyn QueryGenerator>, PathBuf)> {
    if let Some(path) = settings.opt_path("queries") {
        let mut diagnostics = Diagnostics::new();
        let queries = load_queries(&path, n, &mut diagnostics)?;
        report_diagnostics(&diagnostics);
        return Ok((Box::new(file_generator(queries)), path));
    }
    if let Some(path) = settings.opt_path("mock") {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut config: MockGeneratorConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        if let Some(seed) = settings.parsed("seed")? {
            config.seed = seed;
        }
        return Ok((Box::new(mock_generator(config)?), path));
    }
    bail!("missing required setting `queries` (or `mock`)")
}

fn expand(settings: &Settings) -> Result<()> {
    let (corpus_path, corpus) = load_corpus_setting(settings)?;
    let n: usize = settings.required("n")?;
    let out = settings.path("out")?;
    let (generator, source) = generator(settings, n)?;
    let generated = generate_all(&corpus, &generator, n);
    let short = generated.sets.iter().filter(|s| s.queries.len() < n).count();
    if short > 0 {
        warn!("short_query_set ({short}): documents with fewer than {n} queries");
    }
    write_queries_jsonl(&generated.sets, &out)?;
    Provenance {
        command: "expand",
        settings,
        tokenizer: None,
        inputs: vec![("corpus", corpus_path), ("queries", source)],
        extra: BTreeMap::new(),
    }
    .write(&out)?;
    write_timing(&out, "generation_secs", generated.elapsed.as_secs_f64())?;
    info!("wrote {} query sets to {}", generated.sets.len(), out.display());
    Ok(())
}

fn score(settings: &Settings) -> Result<()> {
    let (corpus_path, corpus) = load_corpus_setting(settings)?;
    let n: usize = settings.required("n")?;
    let out = settings.path("out")?;
    let (generator, source) = generator(settings, n)?;
    let tokenizer = settings.tokenizer()?;
    let scorer = lexical_scorer(&corpus, &tokenizer, settings.bm25()?)?;
    let sheet = score_all(&corpus, &generator, &scorer, n)?;
    write_scores_jsonl(&sheet.pairs, &out)?;
    Provenance {
        command: "score",
        settings,
        tokenizer: Some(&tokenizer),
        inputs: vec![("corpus", corpus_path), ("queries", source)],
        extra: BTreeMap::from([("pairs", json!(sheet.pairs.len()))]),
    }
    .write(&out)?;
    write_timing(&out, "filtering_secs", sheet.elapsed.as_secs_f64())?;
    info!("scored {} pairs", sheet.pairs.len());
    Ok(())
}

fn filter_config(settings: &Settings, n: usize) -> Result<FilterConfig> {
    if let Some(t) = settings.parsed::<f64>("t")? {
        return Ok(FilterConfig::explicit(t, n)?);
    }
    match settings.parsed::<f64>("p")? {
        Some(p) => Ok(FilterConfig::proportion(p, n)?),
        None => bail!("missing required setting `p` (or `t`)"),
    }
}

fn filter(settings: &Settings, dedup: bool) -> Result<()> {
    let (corpus_path, corpus) = load_corpus_setting(settings)?;
    let n: usize = settings.required("n")?;
    let out = settings.path("out")?;
    let config = filter_config(settings, n)?;
    let (generator, source) = generator(settings, n)?;
    let mut inputs = vec![("corpus", corpus_path), ("queries", source)];
    let sheet = if config.needs_scores() {
        let scores_path = settings.path("scores")?;
        let pairs = load_scores(&scores_path)?;
        inputs.push(("scores", scores_path));
        // Restricting to the pairs actually generated at this `n` also
        // surfaces missing scores as errors.
        score_all(&corpus, &generator, &external_scorer(pairs), n)?
    } else {
        d2qmm_core::filtering::ScoreSheet {
            pairs: Vec::new(),
            elapsed: std::time::Duration::ZERO,
        }
    };
    let mut outcome = filter_with_sheet(&corpus, &generator, &sheet, &config)?;
    if dedup {
        for doc in &mut outcome.expanded {
            doc.retained_queries = dedup_queries(std::mem::take(&mut doc.retained_queries));
        }
    }
    let retained: usize = outcome.expanded.iter().map(|d| d.retained_queries.len()).sum();
    write_expanded_jsonl(&outcome.expanded, &out)?;
    Provenance {
        command: "filter",
        settings,
        tokenizer: None,
        inputs,
        extra: BTreeMap::from([
            ("threshold", json!(outcome.threshold.to_string())),
            ("scored_pairs", json!(outcome.scored_pairs)),
            ("retained_queries", json!(retained)),
        ]),
    }
    .write(&out)?;
    info!(
        "threshold {} retained {retained} of {} queries",
        outcome.threshold, outcome.scored_pairs
    );
    Ok(())
}

fn index(settings: &Settings) -> Result<()> {
    let out = settings.path("out")?;
    let tokenizer = settings.tokenizer()?;
    let block_size = settings
        .parsed("block_size")?
        .unwrap_or(d2qmm_core::index::DEFAULT_BLOCK_SIZE);
    let (docs, input) = match settings.opt_path("expanded") {
        Some(path) => (read_expanded_jsonl(&path)?, ("expanded", path)),
        None => {
            let (path, corpus) = load_corpus_setting(settings)?;
            let docs = corpus.iter().map(ExpandedDocument::unexpanded).collect();
            (docs, ("corpus", path))
        }
    };
    let index = build_index(&docs, &tokenizer, settings.bm25()?, block_size)?;
    index.save(&out)?;
    Provenance {
        command: "index",
        settings,
        tokenizer: Some(&tokenizer),
        inputs: vec![input],
        extra: BTreeMap::from([
            ("documents", json!(index.doc_count())),
            ("indexed_tokens", json!(index.indexed_token_count())),
            ("index_bytes", json!(index.index_size_bytes())),
        ]),
    }
    .write(&out)?;
    info!(
        "indexed {} documents, {} tokens, {} bytes",
        index.doc_count(),
        index.indexed_token_count(),
        index.index_size_bytes()
    );
    Ok(())
}

fn search(settings: &Settings) -> Result<()> {
    let index_dir = settings.path("index")?;
    let index = InvertedIndex::load(&index_dir)?;
    if settings.get("stopwords").is_some() || settings.get("stem").is_some() {
        index.check_tokenizer(&settings.tokenizer()?)?;
    }
    let topics_path = settings.path("topics")?;
    let topics = load_topics(&topics_path)?;
    let k = settings.parsed("k")?.unwrap_or(RetrievalSettings::default().k);
    let out = settings.path("out")?;
    let tag = settings.get("tag").unwrap_or("d2qmm");
    let run = retrieve(&index, &topics, k);
    write_run(&run, tag, &out)?;
    Provenance {
        command: "search",
        settings,
        tokenizer: Some(index.tokenizer_config()),
        inputs: vec![("index", index_dir), ("topics", topics_path)],
        extra: BTreeMap::new(),
    }
    .write(&out)?;
    info!("wrote run for {} topics to {}", topics.len(), out.display());
    Ok(())
}

fn evaluate(
    settings: &Settings,
    run_path: &Path,
    baseline: Option<&Path>,
    rel_threshold: u32,
    force: bool,
) -> Result<()> {
    let qrels = load_qrels(&settings.path("qrels")?)?;
    let options = EvalOptions { rel_threshold };
    let report = evaluate_run(&read_run(run_path)?, &qrels, options)?;
    let mut record = json!({
        "run": run_path.display().to_string(),
        "rr_at_10": report.mean_rr_at_10,
        "ndcg_at_10": report.mean_ndcg_at_10,
        "judged_queries": report.judged_queries,
        "missing_from_run": report.missing_from_run,
        "unjudged_in_run": report.unjudged_in_run,
        "per_query": report.per_query,
    });
    if let Some(base_path) = baseline {
        let ours = recorded_tokenizer(run_path)?;
        let theirs = recorded_tokenizer(base_path)?;
        if let (Some(a), Some(b)) = (&ours, &theirs) {
            if a != b && !force {
                return Err(d2qmm_core::Error::TokenizerMismatch {
                    index: format!("{} ({a})", run_path.display()),
                    query: format!("{} ({b})", base_path.display()),
                })
                .context("runs were built with different tokenizers; pass --force to compare anyway");
            }
        } else {
            warn!("tokenizer provenance missing for one of the runs; comparison not checked");
        }
        let base = evaluate_run(&read_run(base_path)?, &qrels, options)?;
        let a: Vec<f64> = report.per_query.values().map(|m| m.rr_at_10).collect();
        let b: Vec<f64> = base.per_query.values().map(|m| m.rr_at_10).collect();
        record["baseline"] = json!({
            "run": base_path.display().to_string(),
            "rr_at_10": base.mean_rr_at_10,
            "ndcg_at_10": base.mean_ndcg_at_10,
            "paired_t_test_rr_at_10": paired_t_test(&a, &b)?,
        });
    }
    let text = serde_json::to_string_pretty(&record)? + "\n";
    match settings.opt_path("out") {
        Some(out) => std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?,
        None => print!("{text}"),
    }
    info!(
        "RR@10 {:.4} nDCG@10 {:.4} over {} judged queries",
        report.mean_rr_at_10, report.mean_ndcg_at_10, report.judged_queries
    );
    Ok(())
}

fn run_sweep(
    settings: &Settings,
    command: &str,
    n_values: Vec<usize>,
    p_values: Vec<f64>,
    latency: bool,
) -> Result<()> {
    let (corpus_path, corpus) = load_corpus_setting(settings)?;
    let max_n = n_values.iter().copied().max().unwrap_or(0);
    let (generator, source) = generator(settings, max_n)?;
    let topics_path = settings.path("topics")?;
    let qrels_path = settings.path("qrels")?;
    let topics = load_topics(&topics_path)?;
    let qrels = load_qrels(&qrels_path)?;
    let out = settings.path("out")?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let defaults = RetrievalSettings::default();
    let retrieval = RetrievalSettings {
        tokenizer: settings.tokenizer()?,
        params: settings.bm25()?,
        block_size: settings.parsed("block_size")?.unwrap_or(defaults.block_size),
        k: settings.parsed("k")?.unwrap_or(defaults.k),
    };
    let config = SweepConfig {
        n_values,
        p_values,
        eval: EvalOptions::default(),
        latency: latency.then(LatencyProtocol::default),
        settings: retrieval,
    };
    let mut inputs = vec![
        ("corpus", corpus_path),
        ("queries", source),
        ("topics", topics_path),
        ("qrels", qrels_path),
    ];
    let scorer: Box<dyn RelevanceScorer> = match settings.opt_path("scores") {
        Some(path) => {
            let pairs = load_scores(&path)?;
            inputs.push(("scores", path));
            Box::new(external_scorer(pairs))
        }
        None => Box::new(lexical_scorer(
            &corpus,
            &config.settings.tokenizer,
            config.settings.params,
        )?),
    };
    let started = Instant::now();
    let outcome = sweep(&corpus, &generator, scorer.as_ref(), &topics, &qrels, &config);
    info!(
        "sweep finished {} cells in {:.1}s",
        outcome.rows.len(),
        started.elapsed().as_secs_f64()
    );

    let csv_path = out.join("sweep.csv");
    write_sweep_csv(&outcome.rows, &csv_path)?;
    write_plot_data(&outcome.rows, &out.join("plot.tsv"))?;
    write_budget_csv(&budget_entries(&outcome.rows), &out.join("budget.csv"))?;
    let failures: Vec<_> = outcome
        .failures
        .iter()
        .map(|f| json!({ "n": f.n, "p": f.p, "kind": f.error.kind(), "message": f.error.to_string() }))
        .collect();
    Provenance {
        command,
        settings,
        tokenizer: Some(&config.settings.tokenizer),
        inputs,
        extra: BTreeMap::from([
            ("n_values", json!(config.n_values)),
            ("p_values", json!(config.p_values)),
            ("failures", json!(failures)),
        ]),
    }
    .write(&csv_path)?;
    if !failures.is_empty() {
        bail!(
            "{} sweep cell(s) failed: {}",
            failures.len(),
            serde_json::to_string(&failures)?
        );
    }
    Ok(())
}

fn budget(settings: &Settings, input: &Path) -> Result<()> {
    let entries = read_budget_csv(input)?;
    let report = budget_report(&entries)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match settings.opt_path("out") {
        Some(out) => std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn demo_fixture(settings: &Settings, docs: Option<usize>, topics: Option<usize>) -> Result<()> {
    let out = settings.path("out")?;
    let defaults = FixtureConfig::default();
    let config = FixtureConfig {
        seed: settings.parsed("seed")?.unwrap_or(defaults.seed),
        n: settings.parsed("n")?.unwrap_or(defaults.n),
        docs: docs.unwrap_or(defaults.docs),
        topics: topics.unwrap_or(defaults.topics),
        ..defaults
    };
    if config.docs == 0 {
        return Err(anyhow!("--docs must be at least 1"));
    }
    let fixture = DemoFixture::generate(config.clone());
    fixture.write(&out)?;
    let conf = format!(
        "corpus = corpus.tsv\nqueries = queries.jsonl\nmock = mock.json\ntopics = topics.tsv\nqrels = qrels.txt\nn = {}\n",
        config.n
    );
    std::fs::write(out.join("d2qmm.conf"), conf).context("writing d2qmm.conf")?;
    info!(
        "wrote {} documents, {} topics to {}",
        fixture.corpus.len(),
        fixture.topics.len(),
        out.display()
    );
    Ok(())
}
