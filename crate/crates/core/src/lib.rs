//! Relevance-filtered document expansion.
//!
//! Generated expansion queries are scored against their source passage, a
//! corpus-wide threshold keeps the most relevant proportion `p` of them, and
//! the survivors are appended to the passages before BM25 indexing. The crate
//! also provides Block-Max WAND retrieval, RR@10 / nDCG@10 evaluation,
//! latency measurement, parameter sweeps and a compute-budget comparison.

pub mod corpus_io;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod filtering;
pub mod fixture;
pub mod index;
pub mod pipeline;

pub use corpus_io::{
    Corpus, Diagnostics, Document, GeneratedQuerySet, Qrels, QueryMap, Run, ScoredPair, Topic,
    TopicSet,
};
pub use error::{Error, Result};
pub use expansion::{file_generator, mock_generator, MockGeneratorConfig, QueryGenerator};
pub use filtering::{
    compute_threshold, external_scorer, filter_expand, lexical_scorer, score_all,
    ExpandedDocument, FilterConfig, RelevanceScorer, ThresholdRule,
};
pub use index::{build_index, Bm25Params, Hit, InvertedIndex, SearchResult, TokenizerConfig};
