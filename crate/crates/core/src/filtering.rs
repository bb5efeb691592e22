//! Relevance scoring of generated queries, corpus-wide quantile thresholds,
//! and construction of the filtered expanded corpus.
//!
//! A query `q` generated for document `d` is kept iff `s(q, d) ≥ t`. The
//! threshold is either given explicitly or taken from the score distribution
//! over every generated query in the corpus so that roughly a proportion `p`
//! survives.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{open_text, Corpus, Document, ScoredPair};
use crate::error::{Error, Result};
use crate::expansion::QueryGenerator;
use crate::index::{
    build_index, Bm25Params, IndexSource, InvertedIndex, TokenizerConfig, DEFAULT_BLOCK_SIZE,
};

/// Maps a (query, document) pair to a finite real; larger is more relevant.
pub trait RelevanceScorer: Send + Sync {
    /// `query_index` is the query's position in the document's generated list.
    fn score(&self, doc: &Document, query_index: usize, query: &str) -> Result<f64>;
}

impl<S: RelevanceScorer + ?Sized> RelevanceScorer for &S {
    fn score(&self, doc: &Document, query_index: usize, query: &str) -> Result<f64> {
        (**self).score(doc, query_index, query)
    }
}

/// BM25 of the query against the unexpanded document.
#[derive(Debug, Clone)]
pub struct LexicalScorer {
    stats: InvertedIndex,
}

pub fn lexical_scorer(
    corpus: &Corpus,
    tokenizer: &TokenizerConfig,
    params: Bm25Params,
) -> Result<LexicalScorer> {
    Ok(LexicalScorer {
        stats: build_index(corpus.documents(), tokenizer, params, DEFAULT_BLOCK_SIZE)?,
    })
}

impl LexicalScorer {
    /// Uses an existing index of the unexpanded corpus as the statistics
    /// source.
    pub fn from_index(stats: InvertedIndex) -> Self {
        Self { stats }
    }

    pub fn stats(&self) -> &InvertedIndex {
        &self.stats
    }
}

impl RelevanceScorer for LexicalScorer {
    fn score(&self, doc: &Document, _query_index: usize, query: &str) -> Result<f64> {
        let ordinal = self.stats.ordinal(&doc.doc_id).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "document `{}` is not part of the scorer's corpus statistics",
                doc.doc_id
            ))
        })?;
        Ok(self.stats.score_document(ordinal, &self.stats.analyse(query)))
    }
}

/// Scores produced outside the pipeline, looked up by (doc id, query index).
#[derive(Debug, Clone, Default)]
pub struct ExternalScorer {
    scores: HashMap<String, HashMap<usize, f64>>,
}

pub fn external_scorer(pairs: impl IntoIterator<Item = ScoredPair>) -> ExternalScorer {
    let mut scores: HashMap<String, HashMap<usize, f64>> = HashMap::new();
    for p in pairs {
        scores.entry(p.doc_id).or_default().insert(p.query_index, p.score);
    }
    ExternalScorer { scores }
}

impl ExternalScorer {
    pub fn lookup(&self, doc_id: &str, query_index: usize) -> Result<f64> {
        self.scores
            .get(doc_id)
            .and_then(|m| m.get(&query_index))
            .copied()
            .ok_or_else(|| Error::MissingScore {
                doc_id: doc_id.to_string(),
                query_index,
            })
    }

    pub fn len(&self) -> usize {
        self.scores.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RelevanceScorer for ExternalScorer {
    fn score(&self, doc: &Document, query_index: usize, _query: &str) -> Result<f64> {
        self.lookup(&doc.doc_id, query_index)
    }
}

/// How the retention threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdRule {
    /// Keep the top `p` share of all scored pairs.
    Proportion(f64),
    /// Keep pairs scoring at least this value.
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub rule: ThresholdRule,
    /// Query budget per document.
    pub n: usize,
}

impl FilterConfig {
    pub fn proportion(p: f64, n: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("p must be in [0,1], got {p}")));
        }
        Ok(Self {
            rule: ThresholdRule::Proportion(p),
            n,
        })
    }

    pub fn explicit(t: f64, n: usize) -> Result<Self> {
        if t.is_nan() {
            return Err(Error::InvalidConfig("threshold is NaN".into()));
        }
        Ok(Self {
            rule: ThresholdRule::Explicit(t),
            n,
        })
    }

    /// Resolves the threshold. Scores are only consulted for a proportion
    /// strictly between 0 and 1.
    pub fn resolve<I: IntoIterator<Item = f64>>(&self, scores: I) -> Result<f64> {
        match self.rule {
            ThresholdRule::Explicit(t) => Ok(t),
            ThresholdRule::Proportion(p) => {
                let mut selector = ThresholdSelector::new();
                if p > 0.0 && p < 1.0 {
                    for s in scores {
                        selector.push(s)?;
                    }
                }
                selector.threshold(p)
            }
        }
    }

    /// True when resolving the threshold needs the score distribution.
    pub fn needs_scores(&self) -> bool {
        matches!(self.rule, ThresholdRule::Proportion(p) if p > 0.0 && p < 1.0)
    }
}

/// Number of pairs the quantile rule targets: `⌈p·N⌉`, with products that
/// land within rounding error of an integer treated as that integer (so
/// `0.3 · 10` selects 3, not 4).
pub fn target_count(p: f64, total: u64) -> u64 {
    let x = p * total as f64;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

/// Threshold at descending position `⌈p·N⌉` (1-based). `p = 0` yields `+∞`
/// (retain nothing) and `p = 1` yields `−∞` (retain everything).
pub fn compute_threshold(scores: &[f64], p: f64) -> Result<f64> {
    let mut selector = ThresholdSelector::new();
    if p > 0.0 && p < 1.0 {
        for &s in scores {
            selector.push(s)?;
        }
    }
    selector.threshold(p)
}

const DEFAULT_SPILL_LIMIT: usize = 1 << 26;

/// Exact order-statistic selection over a stream of scores.
///
/// Scores are buffered in memory up to a limit; beyond that, each full buffer
/// is sorted and spilled to an anonymous temporary file, and the threshold is
/// found by a k-way merge of the sorted runs.
#[derive(Debug)]
pub struct ThresholdSelector {
    buffer: Vec<f64>,
    runs: Vec<(File, u64)>,
    spill_limit: usize,
    count: u64,
}

impl Default for ThresholdSelector {
    fn default() -> Self {
        Self::new()
    }
}

fn descending(a: &f64, b: &f64) -> Ordering {
    b.total_cmp(a)
}

impl ThresholdSelector {
    pub fn new() -> Self {
        Self::with_spill_limit(DEFAULT_SPILL_LIMIT)
    }

    pub fn with_spill_limit(limit: usize) -> Self {
        Self {
            buffer: Vec::new(),
            runs: Vec::new(),
            spill_limit: limit.max(1),
            count: 0,
        }
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn spilled_runs(&self) -> usize {
        self.runs.len()
    }

    pub fn push(&mut self, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite score {score}")));
        }
        self.buffer.push(score);
        self.count += 1;
        if self.buffer.len() >= self.spill_limit {
            self.spill()?;
        }
        Ok(())
    }

    fn spill(&mut self) -> Result<()> {
        let tmp = |e| Error::io("<spill file>", e);
        self.buffer.sort_unstable_by(descending);
        let file = tempfile::tempfile().map_err(tmp)?;
        let mut w = BufWriter::new(file);
        for s in &self.buffer {
            w.write_all(&s.to_le_bytes()).map_err(tmp)?;
        }
        let mut file = w.into_inner().map_err(|e| tmp(e.into_error()))?;
        file.seek(SeekFrom::Start(0)).map_err(tmp)?;
        self.runs.push((file, self.buffer.len() as u64));
        log::debug!("spilled run {} ({} scores)", self.runs.len(), self.buffer.len());
        self.buffer.clear();
        Ok(())
    }

    pub fn threshold(mut self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("p must be in [0,1], got {p}")));
        }
        if p == 0.0 {
            return Ok(f64::INFINITY);
        }
        if p == 1.0 {
            return Ok(f64::NEG_INFINITY);
        }
        if self.count == 0 {
            return Err(Error::EmptyScores { p });
        }
        let k = target_count(p, self.count).clamp(1, self.count);
        if self.runs.is_empty() {
            let (_, kth, _) = self.buffer.select_nth_unstable_by((k - 1) as usize, descending);
            return Ok(*kth);
        }
        if !self.buffer.is_empty() {
            self.spill()?;
        }
        self.merge_kth(k)
    }

    fn merge_kth(self, k: u64) -> Result<f64> {
        struct Head {
            value: f64,
            run: usize,
        }
        impl PartialEq for Head {
            fn eq(&self, o: &Self) -> bool {
                self.cmp(o) == Ordering::Equal
            }
        }
        impl Eq for Head {}
        impl PartialOrd for Head {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Head {
            fn cmp(&self, o: &Self) -> Ordering {
                self.value
                    .total_cmp(&o.value)
                    .then_with(|| o.run.cmp(&self.run))
            }
        }

        let tmp = |e| Error::io("<spill file>", e);
        let mut readers: Vec<(BufReader<File>, u64)> = self
            .runs
            .into_iter()
            .map(|(f, n)| (BufReader::new(f), n))
            .collect();
        let next = |run: usize, readers: &mut Vec<(BufReader<File>, u64)>| -> Result<Option<f64>> {
            let (r, left) = &mut readers[run];
            if *left == 0 {
                return Ok(None);
            }
            *left -= 1;
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(tmp)?;
            Ok(Some(f64::from_le_bytes(b)))
        };
        let mut heap = BinaryHeap::new();
        for run in 0..readers.len() {
            if let Some(value) = next(run, &mut readers)? {
                heap.push(Head { value, run });
            }
        }
        let mut taken = 0;
        while let Some(Head { value, run }) = heap.pop() {
            taken += 1;
            if taken == k {
                return Ok(value);
            }
            if let Some(value) = next(run, &mut readers)? {
                heap.push(Head { value, run });
            }
        }
        Err(Error::EmptyScores { p: 0.0 })
    }
}

/// A document together with the generated queries that survived filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedDocument {
    pub doc_id: String,
    pub original_text: String,
    pub retained_queries: Vec<String>,
}

impl ExpandedDocument {
    pub fn unexpanded(doc: &Document) -> Self {
        Self {
            doc_id: doc.doc_id.clone(),
            original_text: doc.text.clone(),
            retained_queries: Vec::new(),
        }
    }

    /// Passage followed by each retained query, single-space separated.
    pub fn text(&self) -> String {
        let mut s = self.original_text.clone();
        for q in &self.retained_queries {
            s.push(' ');
            s.push_str(q);
        }
        s
    }
}

impl IndexSource for ExpandedDocument {
    fn doc_id(&self) -> &str {
        &self.doc_id
    }

    fn text_fragments(&self) -> Vec<&str> {
        std::iter::once(self.original_text.as_str())
            .chain(self.retained_queries.iter().map(String::as_str))
            .collect()
    }
}

/// Builds the expanded corpus: each document keeps, in generation order, the
/// generated queries whose score is at least `threshold`.
///
/// Infinite thresholds are decided without calling the scorer.
pub fn filter_expand<G, S>(
    corpus: &Corpus,
    generator: &G,
    scorer: &S,
    threshold: f64,
    n: usize,
) -> Result<Vec<ExpandedDocument>>
where
    G: QueryGenerator + ?Sized,
    S: RelevanceScorer + ?Sized,
{
    corpus
        .documents()
        .par_iter()
        .map(|doc| {
            let queries = generator.expand(doc, n);
            let retained = if threshold == f64::NEG_INFINITY {
                queries
            } else if threshold == f64::INFINITY {
                Vec::new()
            } else {
                let mut kept = Vec::new();
                for (i, q) in queries.into_iter().enumerate() {
                    if scorer.score(doc, i, &q)? >= threshold {
                        kept.push(q);
                    }
                }
                kept
            };
            Ok(ExpandedDocument {
                doc_id: doc.doc_id.clone(),
                original_text: doc.text.clone(),
                retained_queries: retained,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScoreSheet {
    /// Pairs in corpus order, then generation order.
    pub pairs: Vec<ScoredPair>,
    pub elapsed: Duration,
}

/// Scores every generated query of every document.
pub fn score_all<G, S>(corpus: &Corpus, generator: &G, scorer: &S, n: usize) -> Result<ScoreSheet>
where
    G: QueryGenerator + ?Sized,
    S: RelevanceScorer + ?Sized,
{
    let start = Instant::now();
    let per_doc: Vec<Vec<ScoredPair>> = corpus
        .documents()
        .par_iter()
        .map(|doc| {
            generator
                .expand(doc, n)
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    Ok(ScoredPair {
                        doc_id: doc.doc_id.clone(),
                        query_index: i,
                        score: scorer.score(doc, i, q)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<ScoredPair> = per_doc.into_iter().flatten().collect();
    let mut elapsed = start.elapsed();
    if !pairs.is_empty() && elapsed.is_zero() {
        elapsed = Duration::from_nanos(1);
    }
    Ok(ScoreSheet { pairs, elapsed })
}

#[derive(Serialize, Deserialize)]
struct ExpandedRecord {
    docno: String,
    text: String,
    queries_retained: Vec<String>,
}

/// Writes `{docno, text, queries_retained}` per line, where `text` is the
/// full expanded text that gets indexed.
pub fn write_expanded_jsonl(docs: &[ExpandedDocument], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for d in docs {
        let rec = ExpandedRecord {
            docno: d.doc_id.clone(),
            text: d.text(),
            queries_retained: d.retained_queries.clone(),
        };
        serde_json::to_writer(&mut out, &rec).expect("in-memory write");
        out.push(b'\n');
    }
    crate::corpus_io::write_bytes(path, &out)
}

pub fn read_expanded_jsonl(path: &Path) -> Result<Vec<ExpandedDocument>> {
    use std::io::BufRead;
    let mut docs = Vec::new();
    for (i, line) in open_text(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExpandedRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        let suffix: String = rec.queries_retained.iter().map(|q| format!(" {q}")).collect();
        let original = rec.text.strip_suffix(&suffix).ok_or_else(|| {
            Error::parse(path, i + 1, "text does not end with the retained queries")
        })?;
        docs.push(ExpandedDocument {
            doc_id: rec.docno,
            original_text: original.to_string(),
            retained_queries: rec.queries_retained,
        });
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::file_generator;
    use crate::corpus_io::{GeneratedQuerySet, QueryMap};

    #[test]
    fn threshold_examples() {
        let scores: Vec<f64> = (1..=10).map(f64::from).collect();
        let t = compute_threshold(&scores, 0.3).unwrap();
        assert_eq!(t, 8.0);
        let mut kept: Vec<f64> = scores.iter().copied().filter(|&s| s >= t).collect();
        kept.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(kept, [10.0, 9.0, 8.0]);

        let ties = [5.0, 5.0, 5.0, 1.0];
        let t = compute_threshold(&ties, 0.5).unwrap();
        assert_eq!(t, 5.0);
        assert_eq!(ties.iter().filter(|&&s| s >= t).count(), 3);
    }

    #[test]
    fn threshold_sentinels_and_errors() {
        assert_eq!(compute_threshold(&[], 0.0).unwrap(), f64::INFINITY);
        assert_eq!(compute_threshold(&[], 1.0).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(compute_threshold(&[], 0.5), Err(Error::EmptyScores { .. })));
        assert!(compute_threshold(&[1.0], 1.5).is_err());
    }

    #[test]
    fn target_count_absorbs_rounding() {
        assert_eq!(target_count(0.3, 10), 3);
        assert_eq!(target_count(0.7, 10), 7);
        assert_eq!(target_count(0.1, 30), 3);
        assert_eq!(target_count(0.5, 3), 2);
        assert_eq!(target_count(0.01, 3), 1);
    }

    #[test]
    fn spilled_selection_matches_in_memory() {
        let scores: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1009) as f64 / 3.0).collect();
        for p in [0.001, 0.1, 0.3, 0.5, 0.77, 0.999] {
            let mut spilling = ThresholdSelector::with_spill_limit(64);
            for &s in &scores {
                spilling.push(s).unwrap();
            }
            assert!(spilling.spilled_runs() > 1);
            assert_eq!(
                spilling.threshold(p).unwrap(),
                compute_threshold(&scores, p).unwrap(),
                "p = {p}"
            );
        }
    }

    fn tiny() -> (Corpus, crate::expansion::FileGenerator) {
        let corpus = Corpus::from_documents(vec![
            Document::new("d1", "barley cereal grain"),
            Document::new("d2", "beer brewing"),
        ])
        .unwrap();
        let mut map = QueryMap::new();
        for (id, qs) in [
            ("d1", vec!["what is barley", "bare wheat", "barley grain uses"]),
            ("d2", vec!["beer", "tibetan cuisine", "brewing beer"]),
        ] {
            map.insert(
                id.to_string(),
                GeneratedQuerySet {
                    doc_id: id.to_string(),
                    queries: qs.into_iter().map(String::from).collect(),
                },
            );
        }
        (corpus, file_generator(map))
    }

    #[test]
    fn lexical_scorer_properties() {
        let (corpus, _) = tiny();
        let s = lexical_scorer(&corpus, &TokenizerConfig::default(), Bm25Params::default()).unwrap();
        let d1 = &corpus.documents()[0];
        assert_eq!(s.score(d1, 0, "tibetan cuisine").unwrap(), 0.0);
        assert!(s.score(d1, 0, "barley").unwrap() > 0.0);
        assert_eq!(
            s.score(d1, 0, "barley grain").unwrap(),
            s.score(d1, 0, "grain barley").unwrap()
        );
        assert!(s.score(&Document::new("zz", "x"), 0, "x").is_err());
    }

    #[test]
    fn identities_at_extreme_thresholds() {
        let (corpus, gen) = tiny();
        let scorer = external_scorer(Vec::new());
        let all = filter_expand(&corpus, &gen, &scorer, f64::NEG_INFINITY, 3).unwrap();
        assert!(all.iter().all(|d| d.retained_queries.len() == 3));
        let none = filter_expand(&corpus, &gen, &scorer, f64::INFINITY, 3).unwrap();
        assert!(none.iter().all(|d| d.retained_queries.is_empty()));
        assert_eq!(none[0].text(), "barley cereal grain");
    }

    #[test]
    fn external_scores_drive_retention() {
        let (corpus, gen) = tiny();
        let pairs = [("d1", 0, 3.4), ("d1", 1, 0.1), ("d1", 2, 2.0), ("d2", 0, 1.0), ("d2", 1, -2.0), ("d2", 2, 2.5)]
            .map(|(d, i, s)| ScoredPair {
                doc_id: d.into(),
                query_index: i,
                score: s,
            });
        let scorer = external_scorer(pairs);
        assert_eq!(scorer.lookup("d1", 0).unwrap(), 3.4);
        assert!(matches!(scorer.lookup("d1", 99), Err(Error::MissingScore { .. })));

        let out = filter_expand(&corpus, &gen, &scorer, 2.0, 3).unwrap();
        assert_eq!(out[0].retained_queries, ["what is barley", "barley grain uses"]);
        assert_eq!(out[1].retained_queries, ["brewing beer"]);
        assert_eq!(out[0].text(), "barley cereal grain what is barley barley grain uses");

        let partial = external_scorer(vec![ScoredPair {
            doc_id: "d1".into(),
            query_index: 0,
            score: 1.0,
        }]);
        assert!(filter_expand(&corpus, &gen, &partial, 0.5, 3).is_err());
    }

    #[test]
    fn score_all_cardinality_and_timing() {
        let (corpus, gen) = tiny();
        let s = lexical_scorer(&corpus, &TokenizerConfig::default(), Bm25Params::default()).unwrap();
        let sheet = score_all(&corpus, &gen, &s, 3).unwrap();
        assert_eq!(sheet.pairs.len(), 6);
        assert!(sheet.elapsed > Duration::ZERO);
        let again = score_all(&corpus, &gen, &s, 3).unwrap();
        assert_eq!(sheet.pairs, again.pairs);
    }

    #[test]
    fn expanded_jsonl_roundtrip() {
        let (corpus, gen) = tiny();
        let docs = filter_expand(&corpus, &gen, &external_scorer(Vec::new()), f64::NEG_INFINITY, 2).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_expanded_jsonl(&docs, f.path()).unwrap();
        assert_eq!(read_expanded_jsonl(f.path()).unwrap(), docs);
    }
}
