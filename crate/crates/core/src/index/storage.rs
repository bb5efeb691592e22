//! On-disk index layout.
//!
//! An index directory holds five files. `header.bin` carries the format
//! version, analyser settings, BM25 parameters and collection statistics,
//! followed by the length and CRC-32 of every other section. All integers and
//! floats are little-endian and fixed width.
//!
//! * `lexicon.bin`  – per term: name, df, byte offsets into postings/blocks,
//!   block count, list-wide score bound.
//! * `postings.bin` – per term, `df` pairs of (doc-ordinal gap, tf) as u32.
//!   The first gap of each list is the ordinal itself.
//! * `blocks.bin`   – per block: last doc ordinal (u32), score bound (f64).
//! * `doctable.bin` – per document: id and token length.

use std::collections::BTreeSet;
use std::path::Path;

use super::{idf, BlockMax, Bm25Params, DocEntry, InvertedIndex, PostingList, TokenizerConfig};
use crate::corpus_io::write_bytes;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"D2QMMIDX";

const HEADER: &str = "header.bin";
const SECTIONS: [&str; 4] = ["lexicon.bin", "postings.bin", "blocks.bin", "doctable.bin"];

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    name: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(name: &'static str, buf: &'a [u8]) -> Self {
        Self { name, buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::IndexFormat(format!("{} truncated at byte {}", self.name, self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::IndexFormat(format!("{}: invalid UTF-8 string", self.name)))
    }
    fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::IndexFormat(format!("{}: trailing bytes", self.name)))
        }
    }
}

impl InvertedIndex {
    /// Serialises every section, header first. The result is a pure function
    /// of the index contents.
    pub fn to_sections(&self) -> Vec<(&'static str, Vec<u8>)> {
        let mut lexicon = Writer::default();
        let mut postings = Writer::default();
        let mut blocks = Writer::default();
        lexicon.u32(self.terms.len() as u32);
        for (term, list) in self.terms.iter().zip(&self.postings) {
            lexicon.str(term);
            lexicon.u32(list.docs.len() as u32);
            lexicon.u64(postings.0.len() as u64);
            lexicon.u64(blocks.0.len() as u64);
            lexicon.u32(list.blocks.len() as u32);
            lexicon.f64(list.max_score);
            let mut prev = 0;
            for (&d, &tf) in list.docs.iter().zip(&list.tfs) {
                postings.u32(d - prev);
                postings.u32(tf);
                prev = d;
            }
            for b in &list.blocks {
                blocks.u32(b.last_doc);
                blocks.f64(b.max_score);
            }
        }
        let mut doctable = Writer::default();
        doctable.u64(self.docs.len() as u64);
        for d in &self.docs {
            doctable.str(&d.doc_id);
            doctable.u32(d.len);
        }
        let sections = [lexicon.0, postings.0, blocks.0, doctable.0];

        let mut header = Writer::default();
        header.0.extend_from_slice(MAGIC);
        header.u32(FORMAT_VERSION);
        header.u32(self.block_size as u32);
        header.f64(self.params.k1);
        header.f64(self.params.b);
        header.u8(self.tokenizer.remove_stopwords as u8);
        header.u8(self.tokenizer.stem as u8);
        header.u32(self.tokenizer.stopwords.len() as u32);
        for w in &self.tokenizer.stopwords {
            header.str(w);
        }
        header.u64(self.docs.len() as u64);
        header.u64(self.total_tokens);
        header.f64(self.avgdl);
        header.u32(SECTIONS.len() as u32);
        for (name, bytes) in SECTIONS.iter().zip(&sections) {
            header.str(name);
            header.u64(bytes.len() as u64);
            header.u32(crc32fast::hash(bytes));
        }

        std::iter::once((HEADER, header.0))
            .chain(SECTIONS.into_iter().zip(sections))
            .collect()
    }

    /// Total serialised size of all sections, header included.
    pub fn index_size_bytes(&self) -> u64 {
        self.to_sections().iter().map(|(_, b)| b.len() as u64).sum()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, bytes) in self.to_sections() {
            write_bytes(&dir.join(name), &bytes)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::io(p, e))
        };
        let header = read(HEADER)?;
        let mut sections = Vec::with_capacity(SECTIONS.len());
        for name in SECTIONS {
            sections.push(read(name)?);
        }
        Self::from_sections(&header, &sections)
    }

    fn from_sections(header: &[u8], sections: &[Vec<u8>]) -> Result<Self> {
        let mut h = Reader::new(HEADER, header);
        if h.take(8)? != MAGIC {
            return Err(Error::IndexFormat("not an index header (bad magic)".into()));
        }
        let version = h.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::IndexFormat(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let block_size = h.u32()? as usize;
        let params = Bm25Params {
            k1: h.f64()?,
            b: h.f64()?,
        };
        let remove_stopwords = h.u8()? != 0;
        let stem = h.u8()? != 0;
        let mut stopwords = BTreeSet::new();
        for _ in 0..h.u32()? {
            stopwords.insert(h.str()?);
        }
        let tokenizer = TokenizerConfig {
            remove_stopwords,
            stem,
            stopwords,
        };
        let doc_count = h.u64()?;
        let total_tokens = h.u64()?;
        let avgdl = h.f64()?;
        let section_count = h.u32()? as usize;
        if section_count != SECTIONS.len() {
            return Err(Error::IndexFormat(format!("expected {} sections", SECTIONS.len())));
        }
        for (name, bytes) in SECTIONS.iter().zip(sections) {
            let stored_name = h.str()?;
            let len = h.u64()?;
            let crc = h.u32()?;
            if stored_name != *name {
                return Err(Error::IndexFormat(format!("section `{stored_name}` out of order")));
            }
            if len != bytes.len() as u64 || crc != crc32fast::hash(bytes) {
                return Err(Error::IndexFormat(format!("checksum mismatch in {name}")));
            }
        }
        h.finish()?;
        if block_size == 0 {
            return Err(Error::IndexFormat("block size 0".into()));
        }

        let mut d = Reader::new("doctable.bin", &sections[3]);
        let n = d.u64()?;
        if n != doc_count {
            return Err(Error::IndexFormat("doc table size disagrees with header".into()));
        }
        let mut docs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            docs.push(DocEntry {
                doc_id: d.str()?,
                len: d.u32()?,
            });
        }
        d.finish()?;

        let mut lex = Reader::new("lexicon.bin", &sections[0]);
        let mut post = Reader::new("postings.bin", &sections[1]);
        let mut blk = Reader::new("blocks.bin", &sections[2]);
        let term_count = lex.u32()? as usize;
        let mut terms = Vec::with_capacity(term_count);
        let mut postings = Vec::with_capacity(term_count);
        for _ in 0..term_count {
            let term = lex.str()?;
            let df = lex.u32()? as usize;
            let post_offset = lex.u64()?;
            let block_offset = lex.u64()?;
            let block_count = lex.u32()? as usize;
            let max_score = lex.f64()?;
            if post_offset != post.pos as u64 || block_offset != blk.pos as u64 {
                return Err(Error::IndexFormat(format!("bad offsets for term `{term}`")));
            }
            let mut list_docs = Vec::with_capacity(df);
            let mut tfs = Vec::with_capacity(df);
            let mut prev = 0u32;
            for i in 0..df {
                let gap = post.u32()?;
                let doc = prev
                    .checked_add(gap)
                    .filter(|_| i == 0 || gap > 0)
                    .ok_or_else(|| Error::IndexFormat(format!("bad gap in `{term}`")))?;
                list_docs.push(doc);
                tfs.push(post.u32()?);
                prev = doc;
            }
            let mut blocks = Vec::with_capacity(block_count);
            for _ in 0..block_count {
                blocks.push(BlockMax {
                    last_doc: blk.u32()?,
                    max_score: blk.f64()?,
                });
            }
            postings.push(PostingList {
                docs: list_docs,
                tfs,
                blocks,
                max_score,
                idf: idf(df as u64, doc_count),
            });
            terms.push(term);
        }
        lex.finish()?;
        post.finish()?;
        blk.finish()?;

        Ok(Self::assemble(
            tokenizer,
            params,
            block_size,
            terms,
            postings,
            docs,
            total_tokens,
            avgdl,
        ))
    }
}
