//! Top-k BM25 retrieval: an exhaustive scorer used as the correctness oracle,
//! and document-at-a-time Block-Max WAND.
//!
//! Both paths sum a document's term contributions in ascending term-id order,
//! so equal documents get bit-identical scores. Results are ordered by
//! descending score, ties by ascending doc id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::{InvertedIndex, PostingList};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

impl Hit {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            score,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
}

impl SearchResult {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.doc_id.as_str())
    }
}

const TERMINATED: u32 = u32::MAX;

/// A scored candidate. `Ord` puts the *worst* candidate first so that a
/// max-heap of these keeps the current k-th best at the top.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    rank: u32,
    ordinal: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.rank.cmp(&other.rank))
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    /// Score a new document must reach to be considered, or `None` while the
    /// heap still has room.
    fn threshold(&self) -> Option<f64> {
        (self.heap.len() >= self.k).then(|| self.heap.peek().map_or(f64::INFINITY, |c| c.score))
    }

    fn offer(&mut self, candidate: Candidate) {
        if self.k == 0 {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(candidate);
        } else if let Some(worst) = self.heap.peek() {
            if candidate < *worst {
                self.heap.pop();
                self.heap.push(candidate);
            }
        }
    }

    fn into_result(self, index: &InvertedIndex) -> SearchResult {
        let mut all = self.heap.into_vec();
        all.sort();
        SearchResult {
            hits: all
                .into_iter()
                .map(|c| Hit::new(index.docs[c.ordinal as usize].doc_id.clone(), c.score))
                .collect(),
        }
    }
}

/// Bound comparison with a small relative slack: upper bounds are sums of
/// rounded values, so a bound can land a few ulps below a score it covers.
fn may_reach(bound: f64, threshold: Option<f64>) -> bool {
    match threshold {
        None => true,
        Some(t) => bound >= t - (t.abs() + 1.0) * 1e-12,
    }
}

impl InvertedIndex {
    /// Known query terms with their multiplicity, in ascending term-id order.
    pub(crate) fn weighted_terms(&self, terms: &[String]) -> Vec<(&PostingList, f64)> {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for t in terms {
            if let Some(&id) = self.term_ids.get(t) {
                *counts.entry(id).or_default() += 1;
            }
        }
        counts
            .into_iter()
            .map(|(id, qtf)| (&self.postings[id as usize], f64::from(qtf)))
            .collect()
    }

    /// Scores every document that contains at least one query term.
    pub fn search_exhaustive(&self, terms: &[String], k: usize) -> SearchResult {
        let weighted = self.weighted_terms(terms);
        let mut acc: Vec<Option<f64>> = vec![None; self.docs.len()];
        for (list, weight) in &weighted {
            for (&d, &tf) in list.docs.iter().zip(&list.tfs) {
                let s = weight * self.partial_score(list, tf, d);
                let slot = &mut acc[d as usize];
                *slot = Some(slot.map_or(s, |a| a + s));
            }
        }
        let mut top = TopK::new(k);
        for (ordinal, score) in acc.into_iter().enumerate() {
            if let Some(score) = score {
                top.offer(Candidate {
                    score,
                    rank: self.doc_rank[ordinal],
                    ordinal: ordinal as u32,
                });
            }
        }
        top.into_result(self)
    }

    /// Block-Max WAND over the query's posting lists.
    pub fn search_bmw(&self, terms: &[String], k: usize) -> SearchResult {
        let mut top = TopK::new(k);
        if k == 0 {
            return top.into_result(self);
        }
        let mut cursors: Vec<Cursor<'_>> = self
            .weighted_terms(terms)
            .into_iter()
            .enumerate()
            .map(|(order, (list, weight))| Cursor::new(list, order, weight, self.block_size))
            .collect();
        let mut contributions: Vec<(usize, f64)> = Vec::with_capacity(cursors.len());

        loop {
            cursors.retain(|c| c.doc() != TERMINATED);
            if cursors.is_empty() {
                break;
            }
            cursors.sort_by_key(Cursor::doc);
            let threshold = top.threshold();

            // Pivot: first cursor at which the summed list bounds may reach
            // the threshold, extended over every cursor on the same document.
            let mut bound = 0.0;
            let Some(mut pivot) = cursors.iter().position(|c| {
                bound += c.upper_bound;
                may_reach(bound, threshold)
            }) else {
                break;
            };
            let pivot_doc = cursors[pivot].doc();
            while pivot + 1 < cursors.len() && cursors[pivot + 1].doc() == pivot_doc {
                pivot += 1;
            }

            let mut block_bound = 0.0;
            for c in &mut cursors[..=pivot] {
                c.shallow_advance(pivot_doc);
                block_bound += c.block_bound();
            }

            if may_reach(block_bound, threshold) {
                if cursors[0].doc() == pivot_doc {
                    contributions.clear();
                    for c in &cursors[..=pivot] {
                        let s = c.weight * self.partial_score(c.list, c.tf(), pivot_doc);
                        contributions.push((c.order, s));
                    }
                    contributions.sort_by_key(|&(order, _)| order);
                    let score = contributions.iter().fold(0.0, |acc, &(_, s)| acc + s);
                    top.offer(Candidate {
                        score,
                        rank: self.doc_rank[pivot_doc as usize],
                        ordinal: pivot_doc,
                    });
                    for c in &mut cursors[..=pivot] {
                        c.advance_to(pivot_doc + 1);
                    }
                } else {
                    // Documents before the pivot cannot qualify; move the
                    // strongest lagging cursor up to it.
                    let lagging = cursors[..pivot]
                        .iter()
                        .take_while(|c| c.doc() < pivot_doc)
                        .count();
                    let i = strongest(&cursors[..lagging]);
                    cursors[i].advance_to(pivot_doc);
                }
            } else {
                // No document up to the end of the shallowest current block
                // can qualify: skip to the next block boundary or the next
                // cursor past the pivot, whichever comes first.
                let mut next = cursors.get(pivot + 1).map_or(TERMINATED, Cursor::doc);
                for c in &cursors[..=pivot] {
                    next = next.min(c.block_last().saturating_add(1));
                }
                let i = strongest(&cursors[..=pivot]);
                cursors[i].advance_to(next);
            }
        }
        top.into_result(self)
    }

    /// Analyses `text` with the index tokenizer and runs Block-Max WAND.
    pub fn search(&self, text: &str, k: usize) -> SearchResult {
        self.search_bmw(&self.analyse(text), k)
    }
}

fn strongest(cursors: &[Cursor<'_>]) -> usize {
    let mut best = 0;
    for (i, c) in cursors.iter().enumerate() {
        if c.upper_bound > cursors[best].upper_bound {
            best = i;
        }
    }
    best
}

struct Cursor<'a> {
    list: &'a PostingList,
    order: usize,
    weight: f64,
    upper_bound: f64,
    block_size: usize,
    pos: usize,
    block: usize,
}

impl<'a> Cursor<'a> {
    fn new(list: &'a PostingList, order: usize, weight: f64, block_size: usize) -> Self {
        Self {
            list,
            order,
            weight,
            upper_bound: weight * list.max_score,
            block_size,
            pos: 0,
            block: 0,
        }
    }

    fn doc(&self) -> u32 {
        self.list.docs.get(self.pos).copied().unwrap_or(TERMINATED)
    }

    fn tf(&self) -> u32 {
        self.list.tfs[self.pos]
    }

    /// Moves the block pointer (not the posting pointer) to the block that
    /// would contain `target`.
    fn shallow_advance(&mut self, target: u32) {
        while self.block < self.list.blocks.len() && self.list.blocks[self.block].last_doc < target
        {
            self.block += 1;
        }
    }

    fn block_bound(&self) -> f64 {
        self.list
            .blocks
            .get(self.block)
            .map_or(0.0, |b| self.weight * b.max_score)
    }

    fn block_last(&self) -> u32 {
        self.list
            .blocks
            .get(self.block)
            .map_or(TERMINATED, |b| b.last_doc)
    }

    /// Positions on the first posting with doc ≥ `target`.
    fn advance_to(&mut self, target: u32) {
        if self.doc() >= target {
            return;
        }
        self.shallow_advance(target);
        if self.block >= self.list.blocks.len() {
            self.pos = self.list.docs.len();
            return;
        }
        let start = self.pos.max(self.block * self.block_size);
        let end = ((self.block + 1) * self.block_size).min(self.list.docs.len());
        self.pos = start + self.list.docs[start..end].partition_point(|&d| d < target);
    }
}
