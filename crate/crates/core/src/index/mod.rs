//! In-memory inverted index with per-block score upper bounds.
//!
//! Documents are numbered by ordinal in input order. Each posting list is cut
//! into fixed-size blocks; a block records its last document ordinal and the
//! largest BM25 partial score of any posting inside it.

mod bm25;
mod porter;
mod search;
mod storage;
mod tokenizer;

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;

use crate::corpus_io::Document;
use crate::error::{Error, Result};

pub use bm25::{bm25_term_score, idf, length_norm, saturate, Bm25Params};
pub use porter::stem;
pub use search::{Hit, SearchResult};
pub use storage::FORMAT_VERSION;
pub use tokenizer::{tokenize, Tokenizer, TokenizerConfig, DEFAULT_STOPWORDS};

pub const DEFAULT_BLOCK_SIZE: usize = 128;

/// Anything that can be fed to [`build_index`]: an id plus one or more text
/// fragments that are indexed as if joined by single spaces.
pub trait IndexSource {
    fn doc_id(&self) -> &str;
    fn text_fragments(&self) -> Vec<&str>;
}

impl IndexSource for Document {
    fn doc_id(&self) -> &str {
        &self.doc_id
    }

    fn text_fragments(&self) -> Vec<&str> {
        vec![&self.text]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMax {
    pub last_doc: u32,
    pub max_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostingList {
    pub(crate) docs: Vec<u32>,
    pub(crate) tfs: Vec<u32>,
    pub(crate) blocks: Vec<BlockMax>,
    pub(crate) max_score: f64,
    pub(crate) idf: f64,
}

impl PostingList {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[u32] {
        &self.docs
    }

    pub fn tfs(&self) -> &[u32] {
        &self.tfs
    }

    pub fn blocks(&self) -> &[BlockMax] {
        &self.blocks
    }

    pub fn max_score(&self) -> f64 {
        self.max_score
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocEntry {
    pub doc_id: String,
    pub len: u32,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    tokenizer: TokenizerConfig,
    params: Bm25Params,
    block_size: usize,
    terms: Vec<String>,
    postings: Vec<PostingList>,
    docs: Vec<DocEntry>,
    total_tokens: u64,
    avgdl: f64,
    // Derived on build/load.
    term_ids: HashMap<String, u32>,
    doc_ordinals: HashMap<String, u32>,
    doc_norms: Vec<f64>,
    doc_rank: Vec<u32>,
}

impl PartialEq for InvertedIndex {
    fn eq(&self, other: &Self) -> bool {
        self.tokenizer == other.tokenizer
            && self.params == other.params
            && self.block_size == other.block_size
            && self.terms == other.terms
            && self.postings == other.postings
            && self.docs == other.docs
            && self.total_tokens == other.total_tokens
            && self.avgdl.to_bits() == other.avgdl.to_bits()
    }
}

/// Document ordinals and term frequencies of one term, before block maxima.
type RawPostings = (Vec<u32>, Vec<u32>);

/// Builds an index. Documents are analysed in parallel and merged in input
/// order, so the result does not depend on the thread count.
pub fn build_index<D>(
    docs: &[D],
    tokenizer: &TokenizerConfig,
    params: Bm25Params,
    block_size: usize,
) -> Result<InvertedIndex>
where
    D: IndexSource + Sync,
{
    params.validate()?;
    if block_size == 0 {
        return Err(Error::InvalidConfig("block_size must be >= 1".into()));
    }
    if docs.len() >= u32::MAX as usize {
        return Err(Error::InvalidConfig("too many documents for u32 ordinals".into()));
    }
    let analyser = Tokenizer::new(tokenizer.clone());

    let analysed: Vec<(Vec<(String, u32)>, u32)> = docs
        .par_iter()
        .map(|doc| {
            let mut tokens = Vec::new();
            for fragment in doc.text_fragments() {
                analyser.tokenize_into(fragment, &mut tokens);
            }
            let len = tokens.len() as u32;
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            (counts.into_iter().collect(), len)
        })
        .collect();

    let mut seen = HashSet::with_capacity(docs.len());
    let mut doc_entries = Vec::with_capacity(docs.len());
    let mut inverted: BTreeMap<String, (Vec<u32>, Vec<u32>)> = BTreeMap::new();
    let mut total_tokens = 0u64;
    for (ordinal, (doc, (counts, len))) in docs.iter().zip(analysed).enumerate() {
        if !seen.insert(doc.doc_id()) {
            return Err(Error::InvalidConfig(format!(
                "duplicate doc_id `{}` in index input",
                doc.doc_id()
            )));
        }
        doc_entries.push(DocEntry {
            doc_id: doc.doc_id().to_string(),
            len,
        });
        total_tokens += u64::from(len);
        for (term, tf) in counts {
            let entry = inverted.entry(term).or_default();
            entry.0.push(ordinal as u32);
            entry.1.push(tf);
        }
    }

    let doc_count = doc_entries.len() as u64;
    let avgdl = if doc_count == 0 {
        0.0
    } else {
        total_tokens as f64 / doc_count as f64
    };
    let doc_norms: Vec<f64> = doc_entries
        .iter()
        .map(|d| length_norm(u64::from(d.len), avgdl, params))
        .collect();

    let (terms, lists): (Vec<String>, Vec<RawPostings>) = inverted.into_iter().unzip();
    let postings: Vec<PostingList> = lists
        .into_par_iter()
        .map(|(docs, tfs)| {
            let term_idf = idf(docs.len() as u64, doc_count);
            let blocks: Vec<BlockMax> = docs
                .chunks(block_size)
                .zip(tfs.chunks(block_size))
                .map(|(bd, bt)| BlockMax {
                    last_doc: *bd.last().expect("non-empty chunk"),
                    max_score: bd
                        .iter()
                        .zip(bt)
                        .map(|(&d, &tf)| saturate(term_idf, tf, doc_norms[d as usize], params.k1))
                        .fold(0.0, f64::max),
                })
                .collect();
            let max_score = blocks.iter().map(|b| b.max_score).fold(0.0, f64::max);
            PostingList {
                docs,
                tfs,
                blocks,
                max_score,
                idf: term_idf,
            }
        })
        .collect();

    let index = InvertedIndex::assemble(
        tokenizer.clone(),
        params,
        block_size,
        terms,
        postings,
        doc_entries,
        total_tokens,
        avgdl,
    );
    debug_assert!(index.audit().is_ok());
    Ok(index)
}

impl InvertedIndex {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        tokenizer: TokenizerConfig,
        params: Bm25Params,
        block_size: usize,
        terms: Vec<String>,
        postings: Vec<PostingList>,
        docs: Vec<DocEntry>,
        total_tokens: u64,
        avgdl: f64,
    ) -> Self {
        let term_ids = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let doc_ordinals = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i as u32))
            .collect();
        let doc_norms = docs
            .iter()
            .map(|d| length_norm(u64::from(d.len), avgdl, params))
            .collect();
        let mut by_id: Vec<u32> = (0..docs.len() as u32).collect();
        by_id.sort_by(|&a, &b| docs[a as usize].doc_id.cmp(&docs[b as usize].doc_id));
        let mut doc_rank = vec![0u32; docs.len()];
        for (rank, &ordinal) in by_id.iter().enumerate() {
            doc_rank[ordinal as usize] = rank as u32;
        }
        Self {
            tokenizer,
            params,
            block_size,
            terms,
            postings,
            docs,
            total_tokens,
            avgdl,
            term_ids,
            doc_ordinals,
            doc_norms,
            doc_rank,
        }
    }

    pub fn tokenizer_config(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn doc_count(&self) -> u64 {
        self.docs.len() as u64
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn docs(&self) -> &[DocEntry] {
        &self.docs
    }

    /// Σ dl over all documents.
    pub fn indexed_token_count(&self) -> u64 {
        self.total_tokens
    }

    pub fn doc_freq(&self, term: &str) -> u64 {
        self.posting_list(term).map_or(0, |p| p.len() as u64)
    }

    pub fn posting_list(&self, term: &str) -> Option<&PostingList> {
        self.term_ids
            .get(term)
            .map(|&id| &self.postings[id as usize])
    }

    pub fn ordinal(&self, doc_id: &str) -> Option<u32> {
        self.doc_ordinals.get(doc_id).copied()
    }

    /// Term frequency of `term` in the document at `ordinal`.
    pub fn term_frequency(&self, term: &str, ordinal: u32) -> u32 {
        self.posting_list(term)
            .and_then(|p| p.docs.binary_search(&ordinal).ok().map(|i| p.tfs[i]))
            .unwrap_or(0)
    }

    pub(crate) fn partial_score(&self, list: &PostingList, tf: u32, ordinal: u32) -> f64 {
        saturate(list.idf, tf, self.doc_norms[ordinal as usize], self.params.k1)
    }

    /// Analyses query text with the index's own tokenizer.
    pub fn analyse(&self, text: &str) -> Vec<String> {
        tokenize(text, &self.tokenizer)
    }

    /// Errors unless `config` is exactly the configuration the index was
    /// built with.
    pub fn check_tokenizer(&self, config: &TokenizerConfig) -> Result<()> {
        if config == &self.tokenizer {
            Ok(())
        } else {
            Err(Error::TokenizerMismatch {
                index: self.tokenizer.describe(),
                query: config.describe(),
            })
        }
    }

    /// BM25 score of a bag of query terms against one document, summed over
    /// query term occurrences.
    pub fn score_document(&self, ordinal: u32, terms: &[String]) -> f64 {
        let mut score = 0.0;
        for (list, weight) in self.weighted_terms(terms) {
            if let Ok(i) = list.docs.binary_search(&ordinal) {
                score += weight * self.partial_score(list, list.tfs[i], ordinal);
            }
        }
        score
    }

    /// Checks structural invariants and block-max soundness: postings
    /// strictly ascending, block boundaries consistent, every block bound at
    /// least every member's partial score, and Σ dl equal to the token count.
    pub fn audit(&self) -> Result<()> {
        let fail = |m: String| Err(Error::IndexFormat(format!("audit failed: {m}")));
        let n = self.docs.len() as u32;
        for (term, list) in self.terms.iter().zip(&self.postings) {
            if list.docs.is_empty() || list.docs.len() != list.tfs.len() {
                return fail(format!("term `{term}` has malformed postings"));
            }
            if list.docs.windows(2).any(|w| w[0] >= w[1]) || list.docs.last() >= Some(&n) {
                return fail(format!("term `{term}` postings not strictly ascending"));
            }
            if list.blocks.len() != list.docs.len().div_ceil(self.block_size) {
                return fail(format!("term `{term}` has wrong block count"));
            }
            let mut term_max = 0.0f64;
            for (bi, block) in list.blocks.iter().enumerate() {
                let start = bi * self.block_size;
                let end = (start + self.block_size).min(list.docs.len());
                if block.last_doc != list.docs[end - 1] {
                    return fail(format!("term `{term}` block {bi} last_doc mismatch"));
                }
                for i in start..end {
                    let s = self.partial_score(list, list.tfs[i], list.docs[i]);
                    if s > block.max_score {
                        return fail(format!(
                            "term `{term}` block {bi}: bound {} < member score {s}",
                            block.max_score
                        ));
                    }
                }
                term_max = term_max.max(block.max_score);
            }
            if list.max_score < term_max {
                return fail(format!("term `{term}` list bound below a block bound"));
            }
        }
        let sum: u64 = self.docs.iter().map(|d| u64::from(d.len)).sum();
        if sum != self.total_tokens {
            return fail(format!("Σ dl = {sum} but token count = {}", self.total_tokens));
        }
        Ok(())
    }
}
