//! Grid over query budget `n` and retained proportion `p`.

use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use super::budget::BudgetEntry;
use super::latency::{measure_latency, LatencyProtocol};
use super::metrics::{evaluate_run, EvalOptions};
use crate::corpus_io::{write_bytes, Corpus, Qrels, TopicSet};
use crate::error::{Error, Result};
use crate::expansion::{generate_all, QueryGenerator};
use crate::filtering::{score_all, FilterConfig, RelevanceScorer, ScoreSheet};
use crate::pipeline::{filter_with_sheet, index_expanded, retrieve, RetrievalSettings};

pub const CSV_HEADER: [&str; 8] = [
    "n",
    "p",
    "t",
    "indexed_tokens",
    "index_bytes",
    "rr_at_10",
    "ndcg_at_10",
    "mrt_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    pub p_values: Vec<f64>,
    pub settings: RetrievalSettings,
    pub eval: EvalOptions,
    /// Timing is opt-in; without it every data output is deterministic.
    pub latency: Option<LatencyProtocol>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub p: f64,
    pub t: f64,
    pub indexed_tokens: u64,
    pub index_bytes: u64,
    pub rr_at_10: f64,
    pub ndcg_at_10: f64,
    pub mrt_ms: Option<f64>,
    pub generation_time: Duration,
    pub filtering_time: Duration,
}

#[derive(Debug)]
pub struct SweepFailure {
    pub n: usize,
    /// `None` when the failure affected every `p` for this `n`.
    pub p: Option<f64>,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// Runs the pipeline once per `(n, p)` cell. Generation and scoring happen
/// once per `n`; a failing cell is recorded and the rest of the grid runs.
pub fn sweep<G, S>(
    corpus: &Corpus,
    generator: &G,
    scorer: &S,
    topics: &TopicSet,
    qrels: &Qrels,
    config: &SweepConfig,
) -> SweepOutcome
where
    G: QueryGenerator + ?Sized,
    S: RelevanceScorer + ?Sized,
{
    let mut outcome = SweepOutcome::default();
    for &n in &config.n_values {
        let generation_time = generate_all(corpus, &generator, n).elapsed;
        let needs_scores = config.p_values.iter().any(|&p| p > 0.0 && p < 1.0);
        let sheet = if needs_scores {
            match score_all(corpus, generator, scorer, n) {
                Ok(s) => s,
                Err(error) => {
                    outcome.failures.push(SweepFailure { n, p: None, error });
                    continue;
                }
            }
        } else {
            ScoreSheet {
                pairs: Vec::new(),
                elapsed: Duration::ZERO,
            }
        };
        for &p in &config.p_values {
            match run_cell(corpus, generator, &sheet, topics, qrels, config, n, p) {
                Ok(mut row) => {
                    row.generation_time = generation_time;
                    outcome.rows.push(row);
                }
                Err(error) => outcome.failures.push(SweepFailure {
                    n,
                    p: Some(p),
                    error,
                }),
            }
        }
    }
    outcome
}

#[allow(clippy::too_many_arguments)]
fn run_cell<G: QueryGenerator + ?Sized>(
    corpus: &Corpus,
    generator: &G,
    sheet: &ScoreSheet,
    topics: &TopicSet,
    qrels: &Qrels,
    config: &SweepConfig,
    n: usize,
    p: f64,
) -> Result<SweepRow> {
    let filter_config = FilterConfig::proportion(p, n)?;
    let filtered = filter_with_sheet(corpus, generator, sheet, &filter_config)?;
    let index = index_expanded(&filtered.expanded, &config.settings)?;
    let run = retrieve(&index, topics, config.settings.k);
    let report = evaluate_run(&run, qrels, config.eval)?;
    log::info!(
        "cell n={n} p={p}: t={} tokens={} RR@10={:.4}",
        filtered.threshold,
        index.indexed_token_count(),
        report.mean_rr_at_10
    );
    let mrt_ms = match config.latency {
        Some(protocol) => {
            Some(measure_latency(&index, topics, config.settings.k, protocol)?.mean_response_ms)
        }
        None => None,
    };
    Ok(SweepRow {
        n,
        p,
        t: filtered.threshold,
        indexed_tokens: index.indexed_token_count(),
        index_bytes: index.index_size_bytes(),
        rr_at_10: report.mean_rr_at_10,
        ndcg_at_10: report.mean_ndcg_at_10,
        mrt_ms,
        generation_time: Duration::ZERO,
        filtering_time: filtered.scoring_time,
    })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.p.to_string(),
            r.t.to_string(),
            r.indexed_tokens.to_string(),
            r.index_bytes.to_string(),
            format!("{:.6}", r.rr_at_10),
            format!("{:.6}", r.ndcg_at_10),
            r.mrt_ms.map(|m| format!("{m:.1}")).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_bytes(path, sweep_csv(rows).as_bytes())
}

/// Tokens-indexed vs RR@10 series, one point per row.
pub fn plot_data(rows: &[SweepRow]) -> String {
    rows.iter()
        .map(|r| format!("{}\t{:.6}\tn={};p={}\n", r.indexed_tokens, r.rr_at_10, r.n, r.p))
        .collect()
}

pub fn write_plot_data(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_bytes(path, plot_data(rows).as_bytes())
}

/// Per-row wall times in seconds, the input of the budget comparison.
pub fn budget_entries(rows: &[SweepRow]) -> Vec<BudgetEntry> {
    rows.iter()
        .map(|r| BudgetEntry {
            n: r.n,
            p: r.p,
            generation: Some(r.generation_time.as_secs_f64()),
            filtering: Some(r.filtering_time.as_secs_f64()),
            effectiveness: r.rr_at_10,
        })
        .collect()
}

pub const BUDGET_CSV_HEADER: [&str; 5] = ["n", "p", "generation_secs", "filtering_secs", "rr_at_10"];

pub fn write_budget_csv(entries: &[BudgetEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BUDGET_CSV_HEADER).expect("in-memory write");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in entries {
        w.write_record([
            e.n.to_string(),
            e.p.to_string(),
            opt(e.generation),
            opt(e.filtering),
            e.effectiveness.to_string(),
        ])
        .expect("in-memory write");
    }
    write_bytes(path, &w.into_inner().expect("in-memory flush"))
}

pub fn read_budget_csv(path: &Path) -> Result<Vec<BudgetEntry>> {
    let reader = crate::corpus_io::open_text(path)?;
    let mut r = csv::Reader::from_reader(reader);
    let mut entries = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let field = |j: usize| rec.get(j).unwrap_or("").trim().to_string();
        let num = |j: usize| -> Result<f64> {
            field(j)
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad number `{}`", field(j))))
        };
        let opt = |j: usize| -> Result<Option<f64>> {
            if field(j).is_empty() {
                Ok(None)
            } else {
                num(j).map(Some)
            }
        };
        entries.push(BudgetEntry {
            n: field(0)
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad n `{}`", field(0))))?,
            p: num(1)?,
            generation: opt(2)?,
            filtering: opt(3)?,
            effectiveness: num(4)?,
        });
    }
    Ok(entries)
}
