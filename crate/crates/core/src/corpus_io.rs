//! Readers and writers for the pipeline's interchange files.
//!
//! Inputs may be plain UTF-8 or gzip-compressed; compression is detected from
//! the magic bytes, never from the file name. Line numbers in errors are
//! 1-based and count every physical line, including blank ones.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::Hit;

/// A single passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }
}

/// An ordered collection of documents with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus, rejecting empty, whitespace-bearing, or repeated ids.
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            validate_doc_id(&doc.doc_id).map_err(|m| Error::parse("<memory>", i + 1, m))?;
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::Duplicate {
                    path: "<memory>".into(),
                    line: i + 1,
                    what: "doc_id",
                    key: doc.doc_id.clone(),
                });
            }
        }
        Ok(Self { docs })
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.docs.iter()
    }
}

/// Expansion queries for one document, in generation order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQuerySet {
    #[serde(rename = "docno")]
    pub doc_id: String,
    pub queries: Vec<String>,
}

/// Expansion queries keyed by document id.
pub type QueryMap = BTreeMap<String, GeneratedQuerySet>;

/// One relevance judgement produced by a scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    #[serde(rename = "docno")]
    pub doc_id: String,
    pub query_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topic {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TopicSet {
    topics: Vec<Topic>,
}

impl TopicSet {
    pub fn from_topics(topics: Vec<Topic>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, t) in topics.iter().enumerate() {
            if !seen.insert(t.query_id.as_str()) {
                return Err(Error::Duplicate {
                    path: "<memory>".into(),
                    line: i + 1,
                    what: "query_id",
                    key: t.query_id.clone(),
                });
            }
        }
        Ok(Self { topics })
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }
}

/// Graded relevance judgements: query id → doc id → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgements: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    /// Adds a judgement; returns false if the pair was already judged.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> bool {
        self.judgements
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
            .is_none()
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgements.get(query_id)?.get(doc_id).copied()
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgements.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgements.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.judgements.iter().map(|(q, m)| (q.as_str(), m))
    }

    pub fn len(&self) -> usize {
        self.judgements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgements.is_empty()
    }
}

/// Ranked results per query id. Query ids iterate in ascending order.
pub type Run = BTreeMap<String, Vec<Hit>>;

/// A non-fatal condition observed while loading or transforming data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
    pub count: usize,
}

/// Structured side channel for warnings; never mixed into data outputs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    entries: Vec<Diagnostic>,
}

impl Diagnostics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn warn(&mut self, code: &str, message: impl Into<String>, count: usize) {
        self.entries.push(Diagnostic {
            code: code.to_string(),
            message: message.into(),
            count,
        });
    }

    pub fn entries(&self) -> &[Diagnostic] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total count carried by entries with the given code.
    pub fn count(&self, code: &str) -> usize {
        self.entries
            .iter()
            .filter(|d| d.code == code)
            .map(|d| d.count)
            .sum()
    }

    pub fn extend(&mut self, other: Diagnostics) {
        self.entries.extend(other.entries);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    /// Picks a format from the file name, looking through a `.gz` suffix.
    pub fn from_path(path: &Path) -> Self {
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        let name = name.strip_suffix(".gz").unwrap_or(&name);
        if name.ends_with(".jsonl") || name.ends_with(".json") {
            CorpusFormat::Jsonl
        } else {
            CorpusFormat::Tsv
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Opens a text file for buffered reading, decompressing gzip transparently.
pub fn open_text(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf().map_err(|e| Error::io(path, e))?;
    if head.len() >= 2 && head[..2] == GZIP_MAGIC {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

/// Yields `(line_number, line)` for every non-blank line, with any trailing
/// carriage return removed.
fn content_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>> + '_> {
    let reader = open_text(path)?;
    Ok(reader
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Ok(mut l) => {
                if l.ends_with('\r') {
                    l.pop();
                }
                if l.trim().is_empty() {
                    None
                } else {
                    Some(Ok((i + 1, l)))
                }
            }
            Err(e) => Some(Err(Error::io(path, e))),
        }))
}

fn looks_like_jsonl(path: &Path) -> Result<bool> {
    let mut reader = open_text(path)?;
    let mut buf = [0u8; 512];
    let n = reader.read(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf[..n]
        .iter()
        .find(|b| !b.is_ascii_whitespace())
        .is_some_and(|&b| b == b'{'))
}

fn validate_doc_id(id: &str) -> std::result::Result<(), String> {
    if id.is_empty() {
        Err("empty document id".to_string())
    } else if id.chars().any(char::is_whitespace) {
        Err(format!("document id `{id}` contains whitespace"))
    } else {
        Ok(())
    }
}

#[derive(Deserialize)]
struct JsonDocument {
    docno: String,
    text: String,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for item in content_lines(path)? {
        let (line_no, line) = item?;
        let doc = match format {
            CorpusFormat::Tsv => {
                let (id, text) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::parse(path, line_no, "expected `doc_id<TAB>text`"))?;
                Document::new(id, text)
            }
            CorpusFormat::Jsonl => {
                let raw: JsonDocument = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
                Document::new(raw.docno, raw.text)
            }
        };
        validate_doc_id(&doc.doc_id).map_err(|m| Error::parse(path, line_no, m))?;
        if seen.insert(doc.doc_id.clone(), line_no).is_some() {
            return Err(Error::Duplicate {
                path: path.into(),
                line: line_no,
                what: "doc_id",
                key: doc.doc_id,
            });
        }
        docs.push(doc);
    }
    Ok(Corpus { docs })
}

/// Loads expansion queries, keeping the first `n` per document.
///
/// Documents with fewer than `n` queries keep what they have; the number of
/// such documents is reported under the `short_query_set` diagnostic code.
pub fn load_queries(path: &Path, n: usize, diagnostics: &mut Diagnostics) -> Result<QueryMap> {
    let mut map = QueryMap::new();
    if looks_like_jsonl(path)? {
        for item in content_lines(path)? {
            let (line_no, line) = item?;
            let set: GeneratedQuerySet = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
            validate_doc_id(&set.doc_id).map_err(|m| Error::parse(path, line_no, m))?;
            if let Some(i) = set.queries.iter().position(|q| q.trim().is_empty()) {
                return Err(Error::parse(path, line_no, format!("query #{i} is empty")));
            }
            if map.contains_key(&set.doc_id) {
                return Err(Error::Duplicate {
                    path: path.into(),
                    line: line_no,
                    what: "docno",
                    key: set.doc_id,
                });
            }
            map.insert(set.doc_id.clone(), set);
        }
    } else {
        for item in content_lines(path)? {
            let (line_no, line) = item?;
            let (id, query) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, line_no, "expected `doc_id<TAB>query`"))?;
            validate_doc_id(id).map_err(|m| Error::parse(path, line_no, m))?;
            if query.trim().is_empty() {
                return Err(Error::parse(path, line_no, "empty query"));
            }
            map.entry(id.to_string())
                .or_insert_with(|| GeneratedQuerySet {
                    doc_id: id.to_string(),
                    queries: Vec::new(),
                })
                .queries
                .push(query.to_string());
        }
    }

    let mut short = 0;
    for set in map.values_mut() {
        if set.queries.len() < n {
            short += 1;
        }
        set.queries.truncate(n);
    }
    if short > 0 {
        diagnostics.warn(
            "short_query_set",
            format!("{short} document(s) have fewer than {n} queries; all available kept"),
            short,
        );
    }
    Ok(map)
}

#[derive(Deserialize)]
struct JsonScore {
    docno: String,
    query_index: usize,
    score: serde_json::Number,
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoredPair>> {
    let jsonl = looks_like_jsonl(path)?;
    let mut pairs = Vec::new();
    let mut seen: HashSet<(String, usize)> = HashSet::new();
    for item in content_lines(path)? {
        let (line_no, line) = item?;
        let pair = if jsonl {
            let raw: JsonScore = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
            let score = raw
                .score
                .as_f64()
                .ok_or_else(|| Error::parse(path, line_no, "score is not representable"))?;
            ScoredPair {
                doc_id: raw.docno,
                query_index: raw.query_index,
                score,
            }
        } else {
            let fields: Vec<&str> = line.split('\t').collect();
            let [doc_id, index, score] = fields[..] else {
                return Err(Error::parse(
                    path,
                    line_no,
                    "expected `doc_id<TAB>query_index<TAB>score`",
                ));
            };
            ScoredPair {
                doc_id: doc_id.to_string(),
                query_index: index
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, line_no, format!("bad query_index `{index}`")))?,
                score: score
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, line_no, format!("bad score `{score}`")))?,
            }
        };
        if !pair.score.is_finite() {
            return Err(Error::parse(path, line_no, format!("non-finite score {}", pair.score)));
        }
        if !seen.insert((pair.doc_id.clone(), pair.query_index)) {
            return Err(Error::Duplicate {
                path: path.into(),
                line: line_no,
                what: "score pair",
                key: format!("{}#{}", pair.doc_id, pair.query_index),
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Loads TREC qrels (`qid iter docid grade`).
pub fn load_qrels(path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::default();
    for item in content_lines(path)? {
        let (line_no, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _iter, doc_id, grade] = fields[..] else {
            return Err(Error::parse(path, line_no, "expected `qid iter docid grade`"));
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad grade `{grade}`")))?;
        let grade = u32::try_from(grade)
            .map_err(|_| Error::parse(path, line_no, format!("negative grade {grade}")))?;
        if !qrels.insert(qid, doc_id, grade) {
            return Err(Error::Duplicate {
                path: path.into(),
                line: line_no,
                what: "qrel",
                key: format!("{qid}/{doc_id}"),
            });
        }
    }
    Ok(qrels)
}

/// Loads topics as `qid<TAB>text`.
pub fn load_topics(path: &Path) -> Result<TopicSet> {
    let mut topics = Vec::new();
    let mut seen = HashSet::new();
    for item in content_lines(path)? {
        let (line_no, line) = item?;
        let (qid, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, line_no, "expected `qid<TAB>text`"))?;
        if qid.is_empty() {
            return Err(Error::parse(path, line_no, "empty query id"));
        }
        if !seen.insert(qid.to_string()) {
            return Err(Error::Duplicate {
                path: path.into(),
                line: line_no,
                what: "query_id",
                key: qid.to_string(),
            });
        }
        topics.push(Topic {
            query_id: qid.to_string(),
            text: text.to_string(),
        });
    }
    Ok(TopicSet { topics })
}

/// Orders hits by descending score, then ascending doc id.
pub fn sort_hits(hits: &mut [Hit]) {
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

/// Renders a run in TREC format. Hits are re-sorted under the tie rule, so
/// the output depends only on the set of (query, doc, score) triples.
pub fn format_run(run: &Run, tag: &str) -> String {
    let mut out = String::new();
    for (qid, hits) in run {
        let mut hits = hits.clone();
        sort_hits(&mut hits);
        for (rank, hit) in hits.iter().enumerate() {
            writeln!(out, "{qid} Q0 {} {} {:.6} {tag}", hit.doc_id, rank + 1, hit.score).unwrap();
        }
    }
    out
}

pub fn write_run(run: &Run, tag: &str, path: &Path) -> Result<()> {
    write_bytes(path, format_run(run, tag).as_bytes())
}

/// Parses a TREC run file. Hits are returned in rank order.
pub fn read_run(path: &Path) -> Result<Run> {
    let mut ranked: BTreeMap<String, Vec<(usize, Hit)>> = BTreeMap::new();
    for item in content_lines(path)? {
        let (line_no, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _q0, doc_id, rank, score, _tag] = fields[..] else {
            return Err(Error::parse(path, line_no, "expected `qid Q0 docid rank score tag`"));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad rank `{rank}`")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad score `{score}`")))?;
        ranked.entry(qid.to_string()).or_default().push((
            rank,
            Hit {
                doc_id: doc_id.to_string(),
                score,
            },
        ));
    }
    Ok(ranked
        .into_iter()
        .map(|(qid, mut hits)| {
            hits.sort_by_key(|(rank, _)| *rank);
            (qid, hits.into_iter().map(|(_, h)| h).collect())
        })
        .collect())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_lines<I, F>(path: &Path, items: I, mut render: F) -> Result<()>
where
    I: IntoIterator,
    F: FnMut(&mut BufWriter<File>, I::Item) -> std::io::Result<()>,
{
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        render(&mut w, item).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus_tsv(corpus: &Corpus, path: &Path) -> Result<()> {
    write_lines(path, corpus.iter(), |w, d| {
        writeln!(w, "{}\t{}", d.doc_id, d.text.replace(['\n', '\r'], " "))
    })
}

pub fn write_queries_jsonl<'a>(
    sets: impl IntoIterator<Item = &'a GeneratedQuerySet>,
    path: &Path,
) -> Result<()> {
    write_lines(path, sets, |w, s| {
        serde_json::to_writer(&mut *w, s)?;
        writeln!(w)
    })
}

pub fn write_scores_jsonl(pairs: &[ScoredPair], path: &Path) -> Result<()> {
    write_lines(path, pairs, |w, p| {
        serde_json::to_writer(&mut *w, p)?;
        writeln!(w)
    })
}

pub fn write_topics_tsv(topics: &TopicSet, path: &Path) -> Result<()> {
    write_lines(path, topics.topics(), |w, t| writeln!(w, "{}\t{}", t.query_id, t.text))
}

pub fn write_qrels(qrels: &Qrels, path: &Path) -> Result<()> {
    let rows = qrels
        .iter()
        .flat_map(|(q, docs)| docs.iter().map(move |(d, g)| (q, d, *g)));
    write_lines(path, rows, |w, (q, d, g)| writeln!(w, "{q} 0 {d} {g}"))
}
