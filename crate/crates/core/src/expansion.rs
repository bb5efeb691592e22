//! Expansion-query providers.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus_io::{Corpus, Document, GeneratedQuerySet, QueryMap};
use crate::error::{Error, Result};
use crate::index::{Tokenizer, TokenizerConfig};

/// Maps a document to an ordered list of at most `n` queries.
pub trait QueryGenerator: Send + Sync {
    fn expand(&self, doc: &Document, n: usize) -> Vec<String>;
}

impl<G: QueryGenerator + ?Sized> QueryGenerator for &G {
    fn expand(&self, doc: &Document, n: usize) -> Vec<String> {
        (**self).expand(doc, n)
    }
}

impl<G: QueryGenerator + ?Sized> QueryGenerator for Box<G> {
    fn expand(&self, doc: &Document, n: usize) -> Vec<String> {
        (**self).expand(doc, n)
    }
}

/// Serves precomputed queries; unknown documents expand to nothing.
#[derive(Debug, Clone, Default)]
pub struct FileGenerator {
    queries: QueryMap,
}

pub fn file_generator(queries: QueryMap) -> FileGenerator {
    FileGenerator { queries }
}

impl QueryGenerator for FileGenerator {
    fn expand(&self, doc: &Document, n: usize) -> Vec<String> {
        self.queries
            .get(&doc.doc_id)
            .map(|set| set.queries.iter().take(n).cloned().collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockGeneratorConfig {
    pub seed: u64,
    /// Share of emitted queries drawn from the document's own terms.
    pub relevant_fraction: f64,
    /// Terms used for hallucinated queries; expected to be absent from the
    /// corpus.
    pub noise_vocabulary: Vec<String>,
}

/// Deterministic stand-in for a sequence-to-sequence generator.
///
/// For each document it emits `round(relevant_fraction · n)` faithful queries
/// (3–6 distinct terms sampled from the document) and fills the rest with
/// hallucinated queries over the noise vocabulary. Positions of the two kinds
/// are shuffled. All randomness is seeded from `(seed, doc_id)`.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    config: MockGeneratorConfig,
    analyser: Tokenizer,
}

pub fn mock_generator(config: MockGeneratorConfig) -> Result<MockGenerator> {
    if !(0.0..=1.0).contains(&config.relevant_fraction) {
        return Err(Error::InvalidConfig(format!(
            "relevant_fraction must be in [0,1], got {}",
            config.relevant_fraction
        )));
    }
    if config.relevant_fraction < 1.0 && config.noise_vocabulary.is_empty() {
        return Err(Error::InvalidConfig(
            "noise_vocabulary must be non-empty when relevant_fraction < 1".into(),
        ));
    }
    if config.noise_vocabulary.iter().any(|t| t.trim().is_empty()) {
        return Err(Error::InvalidConfig("noise_vocabulary contains an empty term".into()));
    }
    Ok(MockGenerator {
        config,
        analyser: Tokenizer::new(TokenizerConfig::default()),
    })
}

const MIN_QUERY_TERMS: u32 = 3;
const MAX_QUERY_TERMS: u32 = 6;

impl MockGenerator {
    pub fn config(&self) -> &MockGeneratorConfig {
        &self.config
    }

    fn rng_for(&self, doc_id: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update(doc_id.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// Like [`QueryGenerator::expand`], but tags each query with whether it
    /// was drawn from the document (`true`) or from the noise vocabulary.
    pub fn expand_labeled(&self, doc: &Document, n: usize) -> Vec<(String, bool)> {
        let mut rng = self.rng_for(&doc.doc_id);

        let mut seen = HashSet::new();
        let doc_terms: Vec<String> = self
            .analyser
            .tokenize(&doc.text)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect();

        let mut faithful = ((self.config.relevant_fraction * n as f64).round() as usize).min(n);
        if doc_terms.is_empty() {
            faithful = 0;
        }
        let mut hallucinated = n - faithful;
        if self.config.noise_vocabulary.is_empty() {
            hallucinated = 0;
        }

        let mut kinds = vec![true; faithful];
        kinds.resize(faithful + hallucinated, false);
        shuffle(&mut rng, &mut kinds);

        kinds
            .into_iter()
            .map(|is_faithful| {
                let pool = if is_faithful {
                    &doc_terms
                } else {
                    &self.config.noise_vocabulary
                };
                let len = rng.gen_range(MIN_QUERY_TERMS..=MAX_QUERY_TERMS) as usize;
                let terms: Vec<&str> = if len <= pool.len() {
                    sample_distinct(&mut rng, pool.len(), len)
                        .into_iter()
                        .map(|i| pool[i].as_str())
                        .collect()
                } else if is_faithful {
                    pool.iter().map(String::as_str).collect()
                } else {
                    (0..len)
                        .map(|_| pool[rng.gen_range(0..pool.len() as u32) as usize].as_str())
                        .collect()
                };
                (terms.join(" "), is_faithful)
            })
            .collect()
    }
}

impl QueryGenerator for MockGenerator {
    fn expand(&self, doc: &Document, n: usize) -> Vec<String> {
        self.expand_labeled(doc, n).into_iter().map(|(q, _)| q).collect()
    }
}

// u32 draws keep the stream identical on 32- and 64-bit targets.
fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i as u32) as usize;
        items.swap(i, j);
    }
}

fn sample_distinct(rng: &mut ChaCha8Rng, pool: usize, amount: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool).collect();
    for i in 0..amount {
        let j = rng.gen_range(i as u32..pool as u32) as usize;
        idx.swap(i, j);
    }
    idx.truncate(amount);
    idx
}

/// Drops repeated query strings, keeping the first occurrence.
pub fn dedup_queries(queries: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    queries.into_iter().filter(|q| seen.insert(q.clone())).collect()
}

/// Wraps a generator and removes duplicate queries from its output.
#[derive(Debug, Clone)]
pub struct Dedup<G>(pub G);

impl<G: QueryGenerator> QueryGenerator for Dedup<G> {
    fn expand(&self, doc: &Document, n: usize) -> Vec<String> {
        dedup_queries(self.0.expand(doc, n))
    }
}

/// Output of running a generator over a whole corpus.
#[derive(Debug, Clone)]
pub struct Generated {
    /// One entry per document, in corpus order.
    pub sets: Vec<GeneratedQuerySet>,
    pub elapsed: Duration,
}

impl Generated {
    pub fn into_map(self) -> QueryMap {
        self.sets.into_iter().map(|s| (s.doc_id.clone(), s)).collect()
    }
}

/// Expands every document in parallel; output order follows the corpus.
pub fn generate_all<G: QueryGenerator>(corpus: &Corpus, generator: &G, n: usize) -> Generated {
    let start = Instant::now();
    let sets = corpus
        .documents()
        .par_iter()
        .map(|d| GeneratedQuerySet {
            doc_id: d.doc_id.clone(),
            queries: generator.expand(d, n),
        })
        .collect();
    Generated {
        sets,
        elapsed: start.elapsed(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise() -> Vec<String> {
        ["zxa", "zxb", "zxc", "zxd", "zxe", "zxf", "zxg"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn doc() -> Document {
        Document::new(
            "d1",
            "Barley is a major cereal grain grown widely and eaten by peasants in Europe",
        )
    }

    #[test]
    fn file_generator_prefixes() {
        let mut map = QueryMap::new();
        map.insert(
            "d1".into(),
            GeneratedQuerySet {
                doc_id: "d1".into(),
                queries: vec!["a".into(), "b".into(), "c".into()],
            },
        );
        let g = file_generator(map);
        assert_eq!(g.expand(&Document::new("d1", ""), 2), ["a", "b"]);
        assert!(g.expand(&Document::new("nope", ""), 5).is_empty());
        assert_eq!(g.expand(&Document::new("d1", ""), 80).len(), 3);
    }

    #[test]
    fn file_generator_serves_full_budget() {
        let queries: Vec<String> = (0..80).map(|i| format!("query {i}")).collect();
        let mut map = QueryMap::new();
        map.insert(
            "d1".into(),
            GeneratedQuerySet {
                doc_id: "d1".into(),
                queries: queries.clone(),
            },
        );
        assert_eq!(file_generator(map).expand(&Document::new("d1", ""), 80), queries);
    }

    #[test]
    fn fully_faithful_uses_document_terms_only() {
        let g = mock_generator(MockGeneratorConfig {
            seed: 7,
            relevant_fraction: 1.0,
            noise_vocabulary: vec![],
        })
        .unwrap();
        let d = doc();
        let terms: HashSet<String> = crate::index::tokenize(&d.text, &TokenizerConfig::default())
            .into_iter()
            .collect();
        let qs = g.expand(&d, 10);
        assert_eq!(qs.len(), 10);
        for q in qs {
            let words: Vec<&str> = q.split(' ').collect();
            assert!((3..=6).contains(&words.len()), "{q}");
            assert!(words.iter().all(|w| terms.contains(*w)), "{q}");
        }
    }

    #[test]
    fn fully_hallucinated_uses_noise_only() {
        let g = mock_generator(MockGeneratorConfig {
            seed: 7,
            relevant_fraction: 0.0,
            noise_vocabulary: noise(),
        })
        .unwrap();
        let qs = g.expand(&doc(), 4);
        assert_eq!(qs.len(), 4);
        let vocab: HashSet<String> = noise().into_iter().collect();
        assert!(qs.iter().flat_map(|q| q.split(' ')).all(|w| vocab.contains(w)));
    }

    #[test]
    fn mock_is_deterministic_and_mixed() {
        let cfg = MockGeneratorConfig {
            seed: 42,
            relevant_fraction: 0.5,
            noise_vocabulary: noise(),
        };
        let a = mock_generator(cfg.clone()).unwrap().expand_labeled(&doc(), 8);
        let b = mock_generator(cfg).unwrap().expand_labeled(&doc(), 8);
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|(_, f)| *f).count(), 4);
    }

    #[test]
    fn mock_output_is_pinned() {
        // Frozen output guards the seeded stream against accidental changes.
        let g = mock_generator(MockGeneratorConfig {
            seed: 1,
            relevant_fraction: 0.5,
            noise_vocabulary: noise(),
        })
        .unwrap();
        let got = g.expand(&doc(), 2);
        assert_eq!(got.len(), 2);
        let digest = Sha256::digest(got.join("\n").as_bytes());
        assert_eq!(
            digest[..4].iter().map(|b| format!("{b:02x}")).collect::<String>(),
            PINNED_DIGEST
        );
    }
    const PINNED_DIGEST: &str = "4cf65986";

    #[test]
    fn bad_configs() {
        let bad_fraction = MockGeneratorConfig {
            seed: 0,
            relevant_fraction: 1.5,
            noise_vocabulary: noise(),
        };
        assert!(mock_generator(bad_fraction).is_err());
        let no_noise = MockGeneratorConfig {
            seed: 0,
            relevant_fraction: 0.5,
            noise_vocabulary: vec![],
        };
        assert!(mock_generator(no_noise).is_err());
    }

    #[test]
    fn dedup_keeps_first() {
        let q = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(dedup_queries(q(&["a", "b", "a", "c", "b"])), q(&["a", "b", "c"]));
    }
}
