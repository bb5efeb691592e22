use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::porter;

/// English stopwords (the alphanumeric entries of the common NLTK list).
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "ain", "all", "am", "an", "and", "any",
    "are", "aren", "as", "at", "be", "because", "been", "before", "being", "below", "between",
    "both", "but", "by", "can", "couldn", "d", "did", "didn", "do", "does", "doesn", "doing",
    "don", "down", "during", "each", "few", "for", "from", "further", "had", "hadn", "has",
    "hasn", "have", "haven", "having", "he", "her", "here", "hers", "herself", "him", "himself",
    "his", "how", "i", "if", "in", "into", "is", "isn", "it", "its", "itself", "just", "ll", "m",
    "ma", "me", "mightn", "more", "most", "mustn", "my", "myself", "needn", "no", "nor", "not",
    "now", "o", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves",
    "out", "over", "own", "re", "s", "same", "shan", "she", "should", "shouldn", "so", "some",
    "such", "t", "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there",
    "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "ve",
    "very", "was", "wasn", "we", "were", "weren", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "won", "wouldn", "y", "you", "your", "yours",
    "yourself", "yourselves",
];

/// Text analysis settings. Stored in the index header; queries must be
/// analysed with the exact configuration the index was built with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub remove_stopwords: bool,
    pub stem: bool,
    pub stopwords: BTreeSet<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            remove_stopwords: true,
            stem: false,
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TokenizerConfig {
    /// No stopword removal, no stemming.
    pub fn plain() -> Self {
        Self {
            remove_stopwords: false,
            ..Self::default()
        }
    }

    /// Stable hex digest identifying this configuration.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update([self.remove_stopwords as u8, self.stem as u8]);
        for w in &self.stopwords {
            h.update((w.len() as u32).to_le_bytes());
            h.update(w.as_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn describe(&self) -> String {
        format!(
            "stopwords={} stem={} ({} stopword entries, {})",
            self.remove_stopwords,
            self.stem,
            self.stopwords.len(),
            self.fingerprint()
        )
    }
}

/// A ready-to-use analyser built from a [`TokenizerConfig`].
#[derive(Debug, Clone)]
pub struct Tokenizer {
    config: TokenizerConfig,
    stopwords: HashSet<String>,
}

impl Tokenizer {
    pub fn new(config: TokenizerConfig) -> Self {
        let stopwords = config.stopwords.iter().cloned().collect();
        Self { config, stopwords }
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    /// Lowercases, splits on runs of non-alphanumeric characters, then
    /// optionally drops stopwords and stems.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        self.tokenize_into(text, &mut out);
        out
    }

    pub fn tokenize_into(&self, text: &str, out: &mut Vec<String>) {
        let lower = text.to_lowercase();
        for raw in lower.split(|c: char| !c.is_alphanumeric()) {
            if raw.is_empty() {
                continue;
            }
            if self.config.remove_stopwords && self.stopwords.contains(raw) {
                continue;
            }
            if self.config.stem {
                out.push(porter::stem(raw));
            } else {
                out.push(raw.to_string());
            }
        }
    }
}

pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    Tokenizer::new(config.clone()).tokenize(text)
}
