//! Flat `key = value` configuration with flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use d2qmm_core::index::DEFAULT_STOPWORDS;
use d2qmm_core::{Bm25Params, TokenizerConfig};
use sha2::{Digest, Sha256};

pub const ENV_CONFIG: &str = "D2QMM_CONFIG";

/// Keys accepted in config files; flags use the same names with `-`.
pub const KEYS: &[&str] = &[
    "corpus",
    "queries",
    "scores",
    "topics",
    "qrels",
    "index",
    "expanded",
    "mock",
    "n",
    "p",
    "t",
    "k1",
    "b",
    "stopwords",
    "stem",
    "block_size",
    "k",
    "threads",
    "seed",
    "out",
    "tag",
];

/// Effective settings after merging the config file with flags.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

pub fn parse_file(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), i + 1))?;
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            bail!("{}:{}: unknown key `{key}`", path.display(), i + 1);
        }
        values.insert(key, value.trim().to_string());
    }
    Ok(values)
}

impl Settings {
    /// Loads `file` (or the file named by `D2QMM_CONFIG`) and applies
    /// `overrides` on top. Relative paths in the file resolve against the
    /// file's directory.
    pub fn load(file: Option<&Path>, overrides: BTreeMap<String, String>) -> Result<Self> {
        let env_file = std::env::var_os(ENV_CONFIG).map(PathBuf::from);
        let mut values = BTreeMap::new();
        if let Some(path) = file.map(Path::to_path_buf).or(env_file) {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
            for (k, v) in parse_file(&text, &path)? {
                let v = if is_path_key(&k) && Path::new(&v).is_relative() && !v.is_empty() {
                    base.join(v).to_string_lossy().into_owned()
                } else {
                    v
                };
                values.insert(k, v);
            }
        }
        values.extend(overrides);
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| anyhow!("missing required setting `{key}`"))
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!("setting `{key}` = `{v}`: {e}"))
            })
            .transpose()
    }

    pub fn required<T>(&self, key: &str) -> Result<T>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.parsed(key)?
            .ok_or_else(|| anyhow!("missing required setting `{key}`"))
    }

    pub fn bm25(&self) -> Result<Bm25Params> {
        let d = Bm25Params::default();
        let params = Bm25Params {
            k1: self.parsed("k1")?.unwrap_or(d.k1),
            b: self.parsed("b")?.unwrap_or(d.b),
        };
        params.validate()?;
        Ok(params)
    }

    /// `stopwords` is `on`, `off`, or a path to a one-word-per-line list.
    pub fn tokenizer(&self) -> Result<TokenizerConfig> {
        let stem = match self.get("stem") {
            None => false,
            Some(v) => parse_bool(v).ok_or_else(|| anyhow!("setting `stem` = `{v}`"))?,
        };
        let default_list = || DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect();
        let (remove_stopwords, stopwords) = match self.get("stopwords") {
            None => (true, default_list()),
            Some(v) => match parse_bool(v) {
                Some(on) => (on, default_list()),
                None => {
                    let text = std::fs::read_to_string(v)
                        .with_context(|| format!("reading stopword list {v}"))?;
                    let words = text
                        .lines()
                        .map(|l| l.trim().to_lowercase())
                        .filter(|l| !l.is_empty())
                        .collect();
                    (true, words)
                }
            },
        };
        Ok(TokenizerConfig {
            remove_stopwords,
            stem,
            stopwords,
        })
    }

    /// Canonical `key=value` lines, sorted by key.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes())[..8])
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

fn is_path_key(key: &str) -> bool {
    matches!(
        key,
        "corpus" | "queries" | "scores" | "topics" | "qrels" | "index" | "expanded" | "mock" | "out"
    )
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "on" | "yes" => Some(true),
        "0" | "false" | "off" | "no" => Some(false),
        _ => None,
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
