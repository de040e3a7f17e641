//! Immutable positional inverted index with corpus statistics.
//!
//! Maps term -> document -> sorted occurrence positions, alongside the
//! document table (docno, length) and the collection statistics every
//! weighting model needs: N, df(t), and the mean document length.
//!
//! On disk the index is a JSON manifest (`manifest.json`: tokenizer config,
//! document table, term dictionary with payload offsets, stats) plus a binary
//! postings file (`postings.bin`), documented in `docs/FORMATS.md`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::corpus::{tokenize, RawDocument, TokenizerConfig};
use crate::error::{Error, Result};

pub const POSTINGS_MAGIC: &[u8; 8] = b"PRIDX001";

/// Internal document handle (position in the document table).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocId(pub u32);

/// Internal term handle (position in the term dictionary).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TermId(pub u32);

/// Postings of one term: documents (ascending id) with sorted positions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PostingList {
    pub docs: Vec<(DocId, Vec<u32>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct DocEntry {
    docno: String,
    len: u32,
}

/// The immutable index. Term ids are assigned in first-encounter order over
/// the input stream, so a build is deterministic for a given document order.
#[derive(Clone, Debug)]
pub struct PositionalIndex {
    tokenizer: TokenizerConfig,
    terms: Vec<String>,
    term_ids: HashMap<String, TermId>,
    postings: Vec<PostingList>,
    docs: Vec<DocEntry>,
    doc_ids: HashMap<String, DocId>,
    total_tokens: u64,
}

impl PositionalIndex {
    /// Builds the index. Tokenization runs per document in parallel; the
    /// merge is single-threaded in stream order.
    pub fn build(documents: &[RawDocument], tokenizer: TokenizerConfig) -> Result<Self> {
        let token_streams: Vec<Vec<String>> = documents
            .par_iter()
            .map(|d| tokenize(&d.text, &tokenizer))
            .collect();

        let mut index = PositionalIndex {
            tokenizer,
            terms: Vec::new(),
            term_ids: HashMap::new(),
            postings: Vec::new(),
            docs: Vec::new(),
            doc_ids: HashMap::new(),
            total_tokens: 0,
        };
        for (doc, tokens) in documents.iter().zip(&token_streams) {
            let doc_id = DocId(index.docs.len() as u32);
            if index
                .doc_ids
                .insert(doc.docno.clone(), doc_id)
                .is_some()
            {
                return Err(Error::InvalidInput(format!(
                    "duplicate docno {:?}",
                    doc.docno
                )));
            }
            index.docs.push(DocEntry {
                docno: doc.docno.clone(),
                len: tokens.len() as u32,
            });
            index.total_tokens += tokens.len() as u64;
            for (pos, tok) in tokens.iter().enumerate() {
                let tid = match index.term_ids.get(tok) {
                    Some(&tid) => tid,
                    None => {
                        let tid = TermId(index.terms.len() as u32);
                        index.terms.push(tok.clone());
                        index.term_ids.insert(tok.clone(), tid);
                        index.postings.push(PostingList::default());
                        tid
                    }
                };
                let list = &mut index.postings[tid.0 as usize];
                match list.docs.last_mut() {
                    Some((d, positions)) if *d == doc_id => positions.push(pos as u32),
                    _ => list.docs.push((doc_id, vec![pos as u32])),
                }
            }
        }
        Ok(index)
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn num_docs(&self) -> u32 {
        self.docs.len() as u32
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Mean document length; 0 for an empty collection.
    pub fn mean_doc_length(&self) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.total_tokens as f64 / self.docs.len() as f64
        }
    }

    pub fn doc_length(&self, doc: DocId) -> Result<u32> {
        self.docs
            .get(doc.0 as usize)
            .map(|d| d.len)
            .ok_or_else(|| Error::Lookup(format!("unknown doc id {}", doc.0)))
    }

    pub fn docno(&self, doc: DocId) -> Result<&str> {
        self.docs
            .get(doc.0 as usize)
            .map(|d| d.docno.as_str())
            .ok_or_else(|| Error::Lookup(format!("unknown doc id {}", doc.0)))
    }

    pub fn doc_id(&self, docno: &str) -> Option<DocId> {
        self.doc_ids.get(docno).copied()
    }

    pub fn term_id(&self, term: &str) -> Option<TermId> {
        self.term_ids.get(term).copied()
    }

    pub fn term(&self, term: TermId) -> Result<&str> {
        self.terms
            .get(term.0 as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::Lookup(format!("unknown term id {}", term.0)))
    }

    /// Number of documents containing `term`; 0 for unseen terms.
    pub fn df(&self, term: &str) -> u32 {
        self.term_id(term)
            .map(|t| self.postings[t.0 as usize].docs.len() as u32)
            .unwrap_or(0)
    }

    pub fn postings(&self, term: TermId) -> Result<&PostingList> {
        self.postings
            .get(term.0 as usize)
            .ok_or_else(|| Error::Lookup(format!("unknown term id {}", term.0)))
    }

    /// Occurrence positions of `term` in `doc`; empty for absent pairs.
    pub fn positions(&self, term: &str, doc: DocId) -> Result<&[u32]> {
        if doc.0 as usize >= self.docs.len() {
            return Err(Error::Lookup(format!("unknown doc id {}", doc.0)));
        }
        Ok(self
            .term_id(term)
            .and_then(|t| {
                let list = &self.postings[t.0 as usize];
                list.docs
                    .binary_search_by_key(&doc, |(d, _)| *d)
                    .ok()
                    .map(|i| list.docs[i].1.as_slice())
            })
            .unwrap_or(&[]))
    }

    /// Term frequency; 0 for absent (term, doc) pairs.
    pub fn tf(&self, term: &str, doc: DocId) -> Result<u32> {
        Ok(self.positions(term, doc)?.len() as u32)
    }

    /// Union of the posting document sets of the query terms.
    pub fn candidate_docs<T: AsRef<str>>(&self, query_terms: &[T]) -> BTreeSet<DocId> {
        let mut out = BTreeSet::new();
        for term in query_terms {
            if let Some(t) = self.term_id(term.as_ref()) {
                out.extend(self.postings[t.0 as usize].docs.iter().map(|(d, _)| *d));
            }
        }
        out
    }

    /// Iterates `(term, doc, positions)` over every posting, in term-id then
    /// doc-id order.
    pub fn iter_postings(&self) -> impl Iterator<Item = (TermId, DocId, &[u32])> {
        self.postings.iter().enumerate().flat_map(|(t, list)| {
            list.docs
                .iter()
                .map(move |(d, pos)| (TermId(t as u32), *d, pos.as_slice()))
        })
    }

    /// Total number of (term, document) postings.
    pub fn num_postings(&self) -> usize {
        self.postings.iter().map(|l| l.docs.len()).sum()
    }

    /// Writes `manifest.json` + `postings.bin` into `dir`.
    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut payload = Vec::new();
        let mut term_entries = Vec::with_capacity(self.terms.len());
        for (term, list) in self.terms.iter().zip(&self.postings) {
            let offset = payload.len() as u64;
            payload.extend_from_slice(&(list.docs.len() as u32).to_le_bytes());
            for (doc, positions) in &list.docs {
                payload.extend_from_slice(&doc.0.to_le_bytes());
                payload.extend_from_slice(&(positions.len() as u32).to_le_bytes());
                for p in positions {
                    payload.extend_from_slice(&p.to_le_bytes());
                }
            }
            term_entries.push(TermEntry {
                term: term.clone(),
                df: list.docs.len() as u32,
                offset,
                bytes: payload.len() as u64 - offset,
            });
        }
        let manifest = Manifest {
            format_version: 1,
            config_hash: config_hash.to_string(),
            tokenizer: self.tokenizer.clone(),
            num_docs: self.docs.len() as u32,
            total_tokens: self.total_tokens,
            docs: self.docs.clone(),
            terms: term_entries,
            postings_file: "postings.bin".into(),
        };
        let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
        manifest_bytes.push(b'\n');
        artifact::write_atomic(&dir.join("manifest.json"), &manifest_bytes)?;
        artifact::write_container(
            &dir.join("postings.bin"),
            POSTINGS_MAGIC,
            &PostingsHeader {
                config_hash: config_hash.to_string(),
                num_terms: self.terms.len(),
            },
            &payload,
        )
    }

    /// Loads an index written by [`PositionalIndex::save`]. Returns the index
    /// and the config hash recorded in the manifest.
    pub fn load(dir: &Path) -> Result<(Self, String)> {
        let manifest_path = dir.join("manifest.json");
        let manifest_bytes = std::fs::read(&manifest_path)
            .map_err(|e| Error::artifact(&manifest_path, format!("read failed: {e}")))?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| Error::artifact(&manifest_path, format!("bad manifest: {e}")))?;
        let postings_path = dir.join(&manifest.postings_file);
        let (pheader, payload): (PostingsHeader, Vec<u8>) =
            artifact::read_container(&postings_path, POSTINGS_MAGIC)?;
        if pheader.num_terms != manifest.terms.len() {
            return Err(Error::artifact(
                &postings_path,
                "term count disagrees with manifest",
            ));
        }
        if pheader.config_hash != manifest.config_hash {
            return Err(Error::artifact(
                &postings_path,
                "config hash disagrees with manifest",
            ));
        }

        let mut postings = Vec::with_capacity(manifest.terms.len());
        for entry in &manifest.terms {
            let block = payload
                .get(entry.offset as usize..(entry.offset + entry.bytes) as usize)
                .ok_or_else(|| Error::artifact(&postings_path, "postings offset out of range"))?;
            postings.push(decode_posting_list(block, &postings_path)?);
        }
        let mut term_ids = HashMap::with_capacity(manifest.terms.len());
        let terms: Vec<String> = manifest.terms.iter().map(|t| t.term.clone()).collect();
        for (i, t) in terms.iter().enumerate() {
            term_ids.insert(t.clone(), TermId(i as u32));
        }
        let mut doc_ids = HashMap::with_capacity(manifest.docs.len());
        for (i, d) in manifest.docs.iter().enumerate() {
            doc_ids.insert(d.docno.clone(), DocId(i as u32));
        }
        let index = PositionalIndex {
            tokenizer: manifest.tokenizer,
            terms,
            term_ids,
            postings,
            docs: manifest.docs,
            doc_ids,
            total_tokens: manifest.total_tokens,
        };
        index.validate()?;
        Ok((index, manifest.config_hash))
    }

    /// Checks the structural invariants: sorted positions within document
    /// bounds, ascending doc ids, and consistent totals.
    pub fn validate(&self) -> Result<()> {
        let mut token_sum = 0u64;
        let mut per_doc: Vec<u64> = vec![0; self.docs.len()];
        for (t, list) in self.postings.iter().enumerate() {
            if list.docs.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "term {:?} has an empty posting list",
                    self.terms[t]
                )));
            }
            let mut prev_doc: Option<DocId> = None;
            for (doc, positions) in &list.docs {
                if prev_doc.is_some_and(|p| p >= *doc) {
                    return Err(Error::InvalidInput("posting doc ids not ascending".into()));
                }
                prev_doc = Some(*doc);
                let len = self.doc_length(*doc)?;
                if positions.is_empty() {
                    return Err(Error::InvalidInput("empty position list".into()));
                }
                let mut prev: Option<u32> = None;
                for &p in positions {
                    if p >= len || prev.is_some_and(|q| q >= p) {
                        return Err(Error::InvalidInput(format!(
                            "bad position {} in doc {} (len {})",
                            p, doc.0, len
                        )));
                    }
                    prev = Some(p);
                }
                per_doc[doc.0 as usize] += positions.len() as u64;
                token_sum += positions.len() as u64;
            }
        }
        for (i, entry) in self.docs.iter().enumerate() {
            if per_doc[i] != entry.len as u64 {
                return Err(Error::InvalidInput(format!(
                    "doc {} length {} disagrees with postings total {}",
                    entry.docno, entry.len, per_doc[i]
                )));
            }
        }
        if token_sum != self.total_tokens {
            return Err(Error::InvalidInput("total token count inconsistent".into()));
        }
        Ok(())
    }
}

fn decode_posting_list(block: &[u8], path: &Path) -> Result<PostingList> {
    let corrupt = || Error::artifact(path, "truncated posting block");
    let mut at = 0usize;
    let mut read_u32 = |block: &[u8]| -> Result<u32> {
        let bytes = block.get(at..at + 4).ok_or_else(corrupt)?;
        at += 4;
        Ok(u32::from_le_bytes(bytes.try_into().expect("4 bytes")))
    };
    let n_docs = read_u32(block)?;
    let mut docs = Vec::with_capacity(n_docs as usize);
    for _ in 0..n_docs {
        let doc = read_u32(block)?;
        let n_pos = read_u32(block)?;
        let mut positions = Vec::with_capacity(n_pos as usize);
        for _ in 0..n_pos {
            positions.push(read_u32(block)?);
        }
        docs.push((DocId(doc), positions));
    }
    if at != block.len() {
        return Err(Error::artifact(path, "posting block has trailing bytes"));
    }
    Ok(PostingList { docs })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config_hash: String,
    tokenizer: TokenizerConfig,
    num_docs: u32,
    total_tokens: u64,
    docs: Vec<DocEntry>,
    terms: Vec<TermEntry>,
    postings_file: String,
}

#[derive(Serialize, Deserialize)]
struct TermEntry {
    term: String,
    df: u32,
    offset: u64,
    bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct PostingsHeader {
    config_hash: String,
    num_terms: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(docno: &str, text: &str) -> RawDocument {
        RawDocument {
            docno: docno.into(),
            text: text.into(),
        }
    }

    fn small_index() -> PositionalIndex {
        PositionalIndex::build(
            &[doc("A1", "red fox"), doc("A2", "fox fox")],
            TokenizerConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn counts_match_hand_tally() {
        let idx = small_index();
        assert_eq!(idx.df("fox"), 2);
        assert_eq!(idx.df("red"), 1);
        assert_eq!(idx.num_docs(), 2);
        assert_eq!(idx.mean_doc_length(), 2.0);
        let a2 = idx.doc_id("A2").unwrap();
        assert_eq!(idx.positions("fox", a2).unwrap(), &[0, 1]);
        assert_eq!(idx.tf("fox", a2).unwrap(), 2);
    }

    #[test]
    fn empty_collection_is_degenerate() {
        let idx = PositionalIndex::build(&[], TokenizerConfig::default()).unwrap();
        assert_eq!(idx.num_docs(), 0);
        assert_eq!(idx.mean_doc_length(), 0.0);
        assert_eq!(idx.df("fox"), 0);
    }

    #[test]
    fn doc_tokenizing_to_nothing_is_indexed_empty() {
        let idx =
            PositionalIndex::build(&[doc("A1", "...")], TokenizerConfig::default()).unwrap();
        assert_eq!(idx.num_docs(), 1);
        assert_eq!(idx.doc_length(DocId(0)).unwrap(), 0);
        assert_eq!(idx.num_postings(), 0);
    }

    #[test]
    fn duplicate_docno_is_a_build_error() {
        let err = PositionalIndex::build(
            &[doc("A1", "x"), doc("A1", "y")],
            TokenizerConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate docno"), "{err}");
    }

    #[test]
    fn absent_lookups_are_zero_and_unknown_docs_error() {
        let idx = small_index();
        let a1 = idx.doc_id("A1").unwrap();
        assert_eq!(idx.tf("cat", a1).unwrap(), 0);
        assert_eq!(idx.df("cat"), 0);
        assert!(idx.tf("fox", DocId(99)).is_err());
        assert!(idx.doc_length(DocId(99)).is_err());
    }

    #[test]
    fn candidate_docs_union() {
        let idx = small_index();
        let a1 = idx.doc_id("A1").unwrap();
        let a2 = idx.doc_id("A2").unwrap();
        let both: BTreeSet<DocId> = [a1, a2].into_iter().collect();
        assert_eq!(idx.candidate_docs(&["fox"]), both);
        assert_eq!(idx.candidate_docs(&["red", "fox"]), both);
        assert!(idx.candidate_docs(&["cat", "dog"]).is_empty());
    }

    #[test]
    fn tf_sums_to_doc_length() {
        let idx = PositionalIndex::build(
            &[doc("A1", "to be or not to be"), doc("A2", "be quick")],
            TokenizerConfig::default(),
        )
        .unwrap();
        for d in 0..idx.num_docs() {
            let doc = DocId(d);
            let total: u32 = (0..idx.num_terms())
                .map(|t| {
                    let term = idx.term(TermId(t as u32)).unwrap().to_string();
                    idx.tf(&term, doc).unwrap()
                })
                .sum();
            assert_eq!(total, idx.doc_length(doc).unwrap());
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let idx = PositionalIndex::build(
            &[
                doc("A1", "red fox jumps"),
                doc("A2", "fox fox"),
                doc("A3", "entirely different words"),
            ],
            TokenizerConfig::default(),
        )
        .unwrap();
        let d1 = dir.path().join("one");
        let d2 = dir.path().join("two");
        idx.save(&d1, "cafebabe").unwrap();
        let (loaded, hash) = PositionalIndex::load(&d1).unwrap();
        assert_eq!(hash, "cafebabe");
        loaded.save(&d2, &hash).unwrap();
        for name in ["manifest.json", "postings.bin"] {
            let a = std::fs::read(d1.join(name)).unwrap();
            let b = std::fs::read(d2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs after round trip");
        }
    }
}
