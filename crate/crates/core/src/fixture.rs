//! Deterministic synthetic collection for end-to-end tests and demos.
//!
//! Passages are drawn from a Zipf-weighted synthetic vocabulary. The mock
//! generator mixes faithful queries (terms of the passage) with hallucinated
//! ones over a separate noise vocabulary that never occurs in any passage.
//! Topics target one passage each and combine two of its terms with two
//! noise terms, so hallucinated expansions attract the wrong passages.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{
    write_corpus_tsv, write_qrels, write_queries_jsonl, write_topics_tsv, Corpus, Document, Qrels,
    Topic, TopicSet,
};
use crate::error::Result;
use crate::expansion::{generate_all, mock_generator, MockGeneratorConfig};
use crate::index::{tokenize, TokenizerConfig, DEFAULT_STOPWORDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub seed: u64,
    pub docs: usize,
    pub topics: usize,
    pub n: usize,
    pub relevant_fraction: f64,
    pub vocabulary_size: usize,
    pub noise_size: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            seed: 2023,
            docs: 1000,
            topics: 200,
            n: 8,
            relevant_fraction: 0.5,
            vocabulary_size: 3000,
            noise_size: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoFixture {
    pub config: FixtureConfig,
    pub corpus: Corpus,
    pub topics: TopicSet,
    pub qrels: Qrels,
    pub mock: MockGeneratorConfig,
}

const CORPUS_ONSETS: &[u8] = b"bdfgklmnprstv";
const NOISE_ONSETS: &[u8] = b"zxqj";
const VOWELS: &[u8] = b"aeiou";
const FILLERS: &[&str] = &["the", "of", "and", "is", "a", "in", "was", "for"];

fn word(rng: &mut ChaCha8Rng, first: &[u8], rest: &[u8]) -> String {
    let syllables = rng.gen_range(2u32..=3);
    let mut w = String::new();
    for i in 0..syllables {
        let onsets = if i == 0 { first } else { rest };
        w.push(onsets[rng.gen_range(0..onsets.len() as u32) as usize] as char);
        w.push(VOWELS[rng.gen_range(0..VOWELS.len() as u32) as usize] as char);
    }
    w
}

fn vocabulary(rng: &mut ChaCha8Rng, size: usize, first: &[u8]) -> Vec<String> {
    let stop: HashSet<&str> = DEFAULT_STOPWORDS.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let w = word(rng, first, CORPUS_ONSETS);
        if !stop.contains(w.as_str()) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [String]) -> &'a str {
    &items[rng.gen_range(0..items.len() as u32) as usize]
}

impl DemoFixture {
    pub fn generate(config: FixtureConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let vocab = vocabulary(&mut rng, config.vocabulary_size.max(1), CORPUS_ONSETS);
        let noise = vocabulary(&mut rng, config.noise_size.max(1), NOISE_ONSETS);

        // Zipf-like weights with a flattened head.
        let cumulative: Vec<f64> = vocab
            .iter()
            .enumerate()
            .scan(0.0, |acc, (r, _)| {
                *acc += 1.0 / (r as f64 + 10.0);
                Some(*acc)
            })
            .collect();
        let total = *cumulative.last().unwrap();

        let mut docs = Vec::with_capacity(config.docs);
        for i in 0..config.docs {
            let len = rng.gen_range(15u32..=35);
            let mut words = Vec::new();
            for _ in 0..len {
                if rng.gen_bool(0.3) {
                    words.push(FILLERS[rng.gen_range(0..FILLERS.len() as u32) as usize]);
                }
                let x = rng.gen::<f64>() * total;
                let r = cumulative.partition_point(|&c| c < x).min(vocab.len() - 1);
                words.push(&vocab[r]);
            }
            docs.push(Document::new(format!("doc{i:05}"), words.join(" ")));
        }
        let corpus = Corpus::from_documents(docs).expect("generated ids are unique");

        let analyser = TokenizerConfig::default();
        let mut targets: Vec<usize> = (0..config.docs).collect();
        let topic_count = config.topics.min(config.docs);
        for i in 0..topic_count {
            let j = rng.gen_range(i as u32..config.docs as u32) as usize;
            targets.swap(i, j);
        }
        let doc_terms: Vec<HashSet<String>> = corpus
            .iter()
            .map(|d| tokenize(&d.text, &analyser).into_iter().collect())
            .collect();

        let mut topics = Vec::with_capacity(topic_count);
        let mut qrels = Qrels::default();
        for (qi, &target) in targets[..topic_count].iter().enumerate() {
            let mut own: Vec<String> = doc_terms[target].iter().cloned().collect();
            own.sort();
            let a = pick(&mut rng, &own).to_string();
            let b = loop {
                let b = pick(&mut rng, &own);
                if b != a || own.len() == 1 {
                    break b.to_string();
                }
            };
            let x = pick(&mut rng, &noise).to_string();
            let y = pick(&mut rng, &noise).to_string();
            let qid = format!("q{qi:04}");
            topics.push(Topic {
                query_id: qid.clone(),
                text: format!("what is the {a} {x} {b} {y}"),
            });
            for (d, terms) in corpus.iter().zip(&doc_terms) {
                let grade = if d.doc_id == corpus.documents()[target].doc_id {
                    2
                } else if terms.contains(&a) && terms.contains(&b) {
                    1
                } else {
                    continue;
                };
                qrels.insert(&qid, &d.doc_id, grade);
            }
        }

        DemoFixture {
            mock: MockGeneratorConfig {
                seed: config.seed,
                relevant_fraction: config.relevant_fraction,
                noise_vocabulary: noise,
            },
            topics: TopicSet::from_topics(topics).expect("generated ids are unique"),
            qrels,
            corpus,
            config,
        }
    }

    /// Writes `corpus.tsv`, `queries.jsonl` (mock output at the fixture's
    /// `n`), `topics.tsv`, `qrels.txt` and `mock.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_corpus_tsv(&self.corpus, &dir.join("corpus.tsv"))?;
        let generator = mock_generator(self.mock.clone())?;
        let generated = generate_all(&self.corpus, &generator, self.config.n);
        write_queries_jsonl(&generated.sets, &dir.join("queries.jsonl"))?;
        write_topics_tsv(&self.topics, &dir.join("topics.tsv"))?;
        write_qrels(&self.qrels, &dir.join("qrels.txt"))?;
        let mock = serde_json::to_string_pretty(&self.mock).expect("serialisable") + "\n";
        crate::corpus_io::write_bytes(&dir.join("mock.json"), mock.as_bytes())
    }
}
