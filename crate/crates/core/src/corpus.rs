//! TREC-format corpus parsing and tokenization.
//!
//! Documents arrive as concatenated `<DOC>...</DOC>` blocks carrying exactly
//! one `<DOCNO>` element; topics as `<top>` blocks with `<num>` and `<title>`
//! fields; relevance judgments as 4-column qrels lines. Text is decoded as
//! UTF-8 with a Latin-1 fallback.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One document of a collection: identifier plus body text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDocument {
    pub docno: String,
    pub text: String,
}

/// A query: identifier plus tokenized title terms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topic {
    pub qid: String,
    pub terms: Vec<String>,
}

/// One binary relevance judgment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QrelEntry {
    pub qid: String,
    pub docno: String,
    pub relevant: bool,
}

/// Tokenization settings, shared bit-identically between index build and
/// query processing (the index manifest embeds them).
///
/// The token rule is fixed: split on any non-alphanumeric character, drop
/// empty tokens, then drop stopwords; positions are assigned after dropping,
/// so the retained stream is numbered contiguously from 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub stopwords: BTreeSet<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            stopwords: BTreeSet::new(),
        }
    }
}

/// Splits `text` into tokens in occurrence order.
///
/// A token's position is its 0-based rank in the returned list.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let mut tokens = Vec::new();
    for raw in text.split(|c: char| !c.is_alphanumeric()) {
        if raw.is_empty() {
            continue;
        }
        let tok = if config.lowercase {
            raw.to_lowercase()
        } else {
            raw.to_string()
        };
        if config.stopwords.contains(&tok) {
            continue;
        }
        tokens.push(tok);
    }
    tokens
}

/// Decodes bytes as UTF-8, falling back to Latin-1.
pub fn decode_text(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

fn strip_tags(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(open) = rest.find('<') {
        out.push_str(&rest[..open]);
        match rest[open..].find('>') {
            Some(close) => {
                out.push(' ');
                rest = &rest[open + close + 1..];
            }
            None => {
                // Unterminated '<' is kept as literal text.
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses concatenated `<DOC>` blocks into documents, in stream order.
///
/// Document text is the concatenation of all element contents other than
/// `<DOCNO>`, with tags stripped and whitespace collapsed to single spaces.
pub fn parse_trec_documents(input: &[u8]) -> Result<Vec<RawDocument>> {
    let text = decode_text(input);
    let mut docs = Vec::new();
    let mut cursor = 0usize;
    while let Some(rel) = text[cursor..].find("<DOC>") {
        let start = cursor + rel;
        let body_start = start + "<DOC>".len();
        let end = text[body_start..].find("</DOC>").ok_or(Error::Parse {
            offset: start,
            msg: "unterminated <DOC> block".into(),
        })?;
        let body = &text[body_start..body_start + end];
        docs.push(parse_doc_block(body, start)?);
        cursor = body_start + end + "</DOC>".len();
    }
    Ok(docs)
}

fn parse_doc_block(body: &str, block_offset: usize) -> Result<RawDocument> {
    let dn_open = body.find("<DOCNO>").ok_or(Error::Parse {
        offset: block_offset,
        msg: "missing DOCNO".into(),
    })?;
    let dn_body = dn_open + "<DOCNO>".len();
    let dn_close = body[dn_body..].find("</DOCNO>").ok_or(Error::Parse {
        offset: block_offset + dn_open,
        msg: "unterminated <DOCNO> element".into(),
    })?;
    let docno = body[dn_body..dn_body + dn_close].trim().to_string();
    if docno.is_empty() {
        return Err(Error::Parse {
            offset: block_offset + dn_open,
            msg: "empty DOCNO".into(),
        });
    }
    let after = &body[dn_body + dn_close + "</DOCNO>".len()..];
    if after.contains("<DOCNO>") {
        return Err(Error::Parse {
            offset: block_offset,
            msg: "multiple DOCNO elements in one DOC block".into(),
        });
    }
    let rest = format!("{} {}", &body[..dn_open], after);
    Ok(RawDocument {
        docno,
        text: normalize_ws(&strip_tags(&rest)),
    })
}

/// Serializes documents back to the `<DOC>` block format; re-parsing the
/// output yields an identical document sequence.
pub fn write_trec_documents(docs: &[RawDocument]) -> String {
    let mut out = String::new();
    for doc in docs {
        out.push_str("<DOC>\n<DOCNO>");
        out.push_str(&doc.docno);
        out.push_str("</DOCNO>\n<TEXT>\n");
        out.push_str(&doc.text);
        out.push_str("\n</TEXT>\n</DOC>\n");
    }
    out
}

fn field_text<'a>(block: &'a str, tag: &str) -> Option<&'a str> {
    let open = block.find(tag)?;
    let body = &block[open + tag.len()..];
    let end = body.find('<').unwrap_or(body.len());
    Some(&body[..end])
}

fn strip_label<'a>(s: &'a str, label: &str) -> &'a str {
    let t = s.trim();
    match t.strip_prefix(label) {
        Some(rest) => rest.trim(),
        None => t,
    }
}

/// Parses `<top>` blocks with `<num>` and `<title>` fields into topics.
///
/// Field contents run to the next tag, so both `<num>51</num>` and the
/// classic unclosed `<num> Number: 051` layouts are accepted; `Number:` and
/// `Topic:` labels are stripped.
pub fn parse_topics(input: &[u8], config: &TokenizerConfig) -> Result<Vec<Topic>> {
    let text = decode_text(input);
    let mut topics = Vec::new();
    let mut cursor = 0usize;
    while let Some(rel) = text[cursor..].find("<top>") {
        let start = cursor + rel;
        let body_start = start + "<top>".len();
        let end = text[body_start..].find("</top>").ok_or(Error::Parse {
            offset: start,
            msg: "unterminated <top> block".into(),
        })?;
        let block = &text[body_start..body_start + end];

        let num = field_text(block, "<num>").ok_or(Error::Parse {
            offset: start,
            msg: "missing <num> field".into(),
        })?;
        let qid = strip_label(num, "Number:").to_string();
        if qid.is_empty() {
            return Err(Error::Parse {
                offset: start,
                msg: "empty <num> field".into(),
            });
        }
        let title = field_text(block, "<title>").ok_or(Error::Parse {
            offset: start,
            msg: format!("missing <title> field for topic {qid}"),
        })?;
        let terms = tokenize(strip_label(title, "Topic:"), config);
        if terms.is_empty() {
            return Err(Error::Parse {
                offset: start,
                msg: format!("empty query for topic {qid}"),
            });
        }
        topics.push(Topic { qid, terms });
        cursor = body_start + end + "</top>".len();
    }
    Ok(topics)
}

/// Serializes topics in the `<top>` format (title = terms joined by spaces).
pub fn write_topics(topics: &[Topic]) -> String {
    let mut out = String::new();
    for t in topics {
        out.push_str("<top>\n<num> Number: ");
        out.push_str(&t.qid);
        out.push_str("\n<title> ");
        out.push_str(&t.terms.join(" "));
        out.push_str("\n</top>\n\n");
    }
    out
}

/// Parses whitespace-separated 4-column qrels lines (`qid iter docno rel`);
/// a judgment is relevant when the rel column is positive.
pub fn parse_qrels(input: &[u8]) -> Result<Vec<QrelEntry>> {
    let text = decode_text(input);
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::ParseLine {
                line: line_no,
                msg: format!("expected 4 columns, got {}", cols.len()),
            });
        }
        let rel: i64 = cols[3].parse().map_err(|_| Error::ParseLine {
            line: line_no,
            msg: format!("relevance column not an integer: {:?}", cols[3]),
        })?;
        if !seen.insert((cols[0].to_string(), cols[2].to_string())) {
            return Err(Error::ParseLine {
                line: line_no,
                msg: format!("duplicate judgment for ({}, {})", cols[0], cols[2]),
            });
        }
        entries.push(QrelEntry {
            qid: cols[0].to_string(),
            docno: cols[2].to_string(),
            relevant: rel > 0,
        });
    }
    Ok(entries)
}

/// Serializes qrels entries to the 4-column format.
pub fn write_qrels(entries: &[QrelEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{} 0 {} {}\n",
            e.qid,
            e.docno,
            if e.relevant { 1 } else { 0 }
        ));
    }
    out
}

/// Relevance judgments grouped by query.
#[derive(Clone, Debug, Default)]
pub struct Qrels {
    by_query: BTreeMap<String, BTreeMap<String, bool>>,
}

impl Qrels {
    pub fn from_entries(entries: impl IntoIterator<Item = QrelEntry>) -> Result<Self> {
        let mut by_query: BTreeMap<String, BTreeMap<String, bool>> = BTreeMap::new();
        for e in entries {
            let q = by_query.entry(e.qid.clone()).or_default();
            if q.insert(e.docno.clone(), e.relevant).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate judgment for ({}, {})",
                    e.qid, e.docno
                )));
            }
        }
        Ok(Qrels { by_query })
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn judgments(&self, qid: &str) -> Option<&BTreeMap<String, bool>> {
        self.by_query.get(qid)
    }

    /// Docnos judged relevant for `qid`.
    pub fn relevant(&self, qid: &str) -> BTreeSet<String> {
        self.by_query
            .get(qid)
            .map(|m| {
                m.iter()
                    .filter(|(_, &rel)| rel)
                    .map(|(d, _)| d.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Docnos judged non-relevant for `qid`.
    pub fn nonrelevant(&self, qid: &str) -> BTreeSet<String> {
        self.by_query
            .get(qid)
            .map(|m| {
                m.iter()
                    .filter(|(_, &rel)| !rel)
                    .map(|(d, _)| d.clone())
                    .collect()
            })
            .unwrap_or_default()
    }
}
