//! In-process composition of the stages: generate, score, threshold, filter,
//! index, retrieve.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{Corpus, Run, TopicSet};
use crate::error::Result;
use crate::expansion::{generate_all, QueryGenerator};
use crate::filtering::{
    external_scorer, filter_expand, score_all, ExpandedDocument, FilterConfig, RelevanceScorer,
    ScoreSheet,
};
use crate::index::{build_index, Bm25Params, InvertedIndex, TokenizerConfig, DEFAULT_BLOCK_SIZE};

/// Settings shared by the indexing and retrieval stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSettings {
    pub tokenizer: TokenizerConfig,
    pub params: Bm25Params,
    pub block_size: usize,
    /// Retrieval depth.
    pub k: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerConfig::default(),
            params: Bm25Params::default(),
            block_size: DEFAULT_BLOCK_SIZE,
            k: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub expanded: Vec<ExpandedDocument>,
    pub threshold: f64,
    pub scored_pairs: usize,
    pub retained_queries: usize,
    /// Wall time spent scoring; zero when the threshold needed no scores.
    pub scoring_time: Duration,
}

/// Scores (when the rule needs it), resolves the threshold, and filters.
pub fn filter_corpus<G, S>(
    corpus: &Corpus,
    generator: &G,
    scorer: &S,
    config: &FilterConfig,
) -> Result<FilterOutcome>
where
    G: QueryGenerator + ?Sized,
    S: RelevanceScorer + ?Sized,
{
    let sheet = if config.needs_scores() {
        score_all(corpus, generator, scorer, config.n)?
    } else {
        ScoreSheet {
            pairs: Vec::new(),
            elapsed: Duration::ZERO,
        }
    };
    filter_with_sheet(corpus, generator, &sheet, config)
}

/// Filters using previously computed scores for the same generator and `n`.
pub fn filter_with_sheet<G>(
    corpus: &Corpus,
    generator: &G,
    sheet: &ScoreSheet,
    config: &FilterConfig,
) -> Result<FilterOutcome>
where
    G: QueryGenerator + ?Sized,
{
    let threshold = config.resolve(sheet.pairs.iter().map(|p| p.score))?;
    let lookup = external_scorer(sheet.pairs.iter().cloned());
    let expanded = filter_expand(corpus, generator, &lookup, threshold, config.n)?;
    Ok(FilterOutcome {
        retained_queries: expanded.iter().map(|d| d.retained_queries.len()).sum(),
        scored_pairs: sheet.pairs.len(),
        scoring_time: if config.needs_scores() {
            sheet.elapsed
        } else {
            Duration::ZERO
        },
        expanded,
        threshold,
    })
}

pub fn index_expanded(docs: &[ExpandedDocument], settings: &RetrievalSettings) -> Result<InvertedIndex> {
    build_index(docs, &settings.tokenizer, settings.params, settings.block_size)
}

/// Runs every topic through Block-Max WAND. Topics are processed in
/// parallel; the run is keyed by query id, so output does not depend on
/// scheduling. Topics with no matches appear with an empty list.
pub fn retrieve(index: &InvertedIndex, topics: &TopicSet, k: usize) -> Run {
    topics
        .topics()
        .par_iter()
        .map(|t| (t.query_id.clone(), index.search(&t.text, k).hits))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Plain BM25 over the unexpanded corpus.
pub fn baseline_index(corpus: &Corpus, settings: &RetrievalSettings) -> Result<InvertedIndex> {
    build_index(
        corpus.documents(),
        &settings.tokenizer,
        settings.params,
        settings.block_size,
    )
}

/// Unfiltered expansion: every generated query appended, no scoring.
pub fn unfiltered_expansion<G: QueryGenerator + ?Sized>(
    corpus: &Corpus,
    generator: &G,
    n: usize,
) -> Vec<ExpandedDocument> {
    generate_all(corpus, &generator, n)
        .sets
        .into_iter()
        .zip(corpus.documents())
        .map(|(set, doc)| ExpandedDocument {
            doc_id: doc.doc_id.clone(),
            original_text: doc.text.clone(),
            retained_queries: set.queries,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub filter: FilterOutcome,
    pub index: InvertedIndex,
    pub run: Run,
}

/// Filter, index and retrieve in one go.
pub fn run_pipeline<G, S>(
    corpus: &Corpus,
    generator: &G,
    scorer: &S,
    config: &FilterConfig,
    settings: &RetrievalSettings,
    topics: &TopicSet,
) -> Result<PipelineOutput>
where
    G: QueryGenerator + ?Sized,
    S: RelevanceScorer + ?Sized,
{
    let filter = filter_corpus(corpus, generator, scorer, config)?;
    let index = index_expanded(&filter.expanded, settings)?;
    let run = retrieve(&index, topics, settings.k);
    Ok(PipelineOutput { filter, index, run })
}
