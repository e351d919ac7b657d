//! Documents, topics, relevance judgments, and the shared tokenizer.
//!
//! Every text that reaches the index or a query (documents, topic titles,
//! generated texts, feedback documents) goes through the same [`Tokenizer`],
//! built from one [`TokenizationConfig`]. The config's fingerprint is stored
//! in the index so a mismatched query side can be rejected.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Read, Write};
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemmerKind {
    #[default]
    None,
    /// English Porter2 (Snowball) stemmer.
    Porter,
}

/// How token boundaries are found.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenPattern {
    /// Tokens are maximal runs of alphanumeric characters.
    #[default]
    Alphanumeric,
    /// Tokens are the non-overlapping matches of a regular expression.
    Regex(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizationConfig {
    pub lowercase: bool,
    pub stopwords: Option<BTreeSet<String>>,
    pub stemmer: StemmerKind,
    pub token_pattern: TokenPattern,
}

impl Default for TokenizationConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            stopwords: None,
            stemmer: StemmerKind::None,
            token_pattern: TokenPattern::Alphanumeric,
        }
    }
}

impl TokenizationConfig {
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stopwords = Some(words.into_iter().map(Into::into).collect());
        self
    }

    /// Short stable identifier of this configuration (CRC32 of its canonical
    /// JSON form, hex encoded).
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:08x}", crc32fast::hash(canonical.as_bytes()))
    }

    pub fn is_stopword(&self, term: &str) -> bool {
        self.stopwords
            .as_ref()
            .is_some_and(|stop| stop.contains(term))
    }
}

/// A compiled [`TokenizationConfig`].
pub struct Tokenizer {
    config: TokenizationConfig,
    pattern: Option<Regex>,
    stemmer: Option<rust_stemmers::Stemmer>,
}

impl std::fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tokenizer")
            .field("config", &self.config)
            .finish()
    }
}

impl Tokenizer {
    pub fn new(config: TokenizationConfig) -> Result<Self> {
        let pattern = match &config.token_pattern {
            TokenPattern::Alphanumeric => None,
            TokenPattern::Regex(p) => Some(
                Regex::new(p)
                    .map_err(|e| Error::InvalidParameter(format!("token pattern: {e}")))?,
            ),
        };
        let stemmer = match config.stemmer {
            StemmerKind::None => None,
            StemmerKind::Porter => {
                Some(rust_stemmers::Stemmer::create(rust_stemmers::Algorithm::English))
            }
        };
        Ok(Self {
            config,
            pattern,
            stemmer,
        })
    }

    pub fn config(&self) -> &TokenizationConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        // Lowercase before splitting: some characters lowercase to a letter
        // plus a combining mark, which must not end up inside a token.
        let lowered;
        let text = if self.config.lowercase {
            lowered = text.to_lowercase();
            lowered.as_str()
        } else {
            text
        };
        let raw: Vec<&str> = match &self.pattern {
            None => text
                .split(|c: char| !c.is_alphanumeric())
                .filter(|s| !s.is_empty())
                .collect(),
            Some(re) => re
                .find_iter(text)
                .map(|m| m.as_str())
                .filter(|s| !s.is_empty())
                .collect(),
        };
        raw.into_iter()
            .filter(|tok| !self.config.is_stopword(tok))
            .map(|tok| match &self.stemmer {
                Some(stemmer) => stemmer.stem(tok).into_owned(),
                None => tok.to_string(),
            })
            .collect()
    }
}

/// Tokenizes `text` under `config`. Builds a throwaway [`Tokenizer`]; prefer
/// constructing one when tokenizing many texts.
pub fn tokenize(text: &str, config: &TokenizationConfig) -> Result<Vec<String>> {
    Ok(Tokenizer::new(config.clone())?.tokenize(text))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>, tokenizer: &Tokenizer) -> Self {
        let text = text.into();
        let tokens = tokenizer.tokenize(&text);
        Self {
            doc_id: doc_id.into(),
            text,
            tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub query_id: String,
    pub title: String,
}

impl Topic {
    pub fn new(query_id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            title: title.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocFormat {
    Jsonl,
    TrecSgml,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    doc_id: String,
    text: String,
}

/// Reads documents and tokenizes them. Record order is preserved.
pub fn load_documents<R: Read>(
    source: R,
    format: DocFormat,
    tokenizer: &Tokenizer,
) -> Result<Vec<Document>> {
    let records = match format {
        DocFormat::Jsonl => read_jsonl_records(source)?,
        DocFormat::TrecSgml => read_sgml_records(source)?,
    };
    let mut seen = HashSet::with_capacity(records.len());
    for r in &records {
        if r.doc_id.is_empty() {
            return Err(Error::InvalidParameter("empty doc_id".into()));
        }
        if !seen.insert(r.doc_id.as_str()) {
            return Err(Error::DuplicateDocId(r.doc_id.clone()));
        }
    }
    Ok(records
        .into_par_iter()
        .map(|r| Document::new(r.doc_id, r.text, tokenizer))
        .collect())
}

fn read_jsonl_records<R: Read>(source: R) -> Result<Vec<DocRecord>> {
    let reader = std::io::BufReader::new(source);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocRecord =
            serde_json::from_str(&line).map_err(|e| Error::malformed(i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

fn sgml_doc_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)<DOC>(.*?)</DOC>").unwrap())
}

fn sgml_docno_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)<DOCNO>\s*(.*?)\s*</DOCNO>").unwrap())
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[^>]*>").unwrap())
}

fn read_sgml_records<R: Read>(mut source: R) -> Result<Vec<DocRecord>> {
    let mut buf = String::new();
    source.read_to_string(&mut buf)?;
    let mut out = Vec::new();
    let mut consumed = 0;
    for (i, cap) in sgml_doc_re().captures_iter(&buf).enumerate() {
        let whole = cap.get(0).unwrap();
        if buf[consumed..whole.start()].to_ascii_uppercase().contains("<DOC>") {
            return Err(Error::malformed(i + 1, "nested or unterminated <DOC>"));
        }
        consumed = whole.end();
        let body = &cap[1];
        let docno = sgml_docno_re()
            .captures(body)
            .ok_or_else(|| Error::malformed(i + 1, "missing <DOCNO>"))?;
        let doc_id = docno[1].trim().to_string();
        let rest = sgml_docno_re().replace(body, " ");
        let text = tag_re().replace_all(&rest, " ");
        out.push(DocRecord {
            doc_id,
            text: text.split_whitespace().collect::<Vec<_>>().join(" "),
        });
    }
    if buf[consumed..].to_ascii_uppercase().contains("<DOC>") {
        return Err(Error::malformed(out.len() + 1, "unterminated <DOC>"));
    }
    Ok(out)
}

/// Writes documents as jsonl (`doc_id`, `text`), one per line.
pub fn write_documents<W: Write>(mut sink: W, docs: &[Document]) -> Result<()> {
    for d in docs {
        let rec = DocRecord {
            doc_id: d.doc_id.clone(),
            text: d.text.clone(),
        };
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopicFormat {
    Jsonl,
    TrecSgml,
}

/// Reads topics. Only the query id and the title (short query) are kept.
pub fn load_topics<R: Read>(source: R, format: TopicFormat) -> Result<Vec<Topic>> {
    let topics = match format {
        TopicFormat::Jsonl => {
            let mut out = Vec::new();
            for (i, line) in std::io::BufReader::new(source).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let t: Topic = serde_json::from_str(&line)
                    .map_err(|e| Error::malformed(i + 1, e.to_string()))?;
                out.push(t);
            }
            out
        }
        TopicFormat::TrecSgml => read_sgml_topics(source)?,
    };
    let mut seen = HashSet::new();
    for t in &topics {
        if !seen.insert(t.query_id.as_str()) {
            return Err(Error::InvalidParameter(format!(
                "duplicate topic `{}`",
                t.query_id
            )));
        }
    }
    Ok(topics)
}

fn read_sgml_topics<R: Read>(mut source: R) -> Result<Vec<Topic>> {
    static TOP: OnceLock<Regex> = OnceLock::new();
    static NUM: OnceLock<Regex> = OnceLock::new();
    static TITLE: OnceLock<Regex> = OnceLock::new();
    let top = TOP.get_or_init(|| Regex::new(r"(?is)<top>(.*?)</top>").unwrap());
    let num = NUM.get_or_init(|| {
        Regex::new(r"(?is)<num>\s*(?:number\s*:)?\s*([^<\s]+)").unwrap()
    });
    let title = TITLE.get_or_init(|| {
        Regex::new(r"(?is)<title>\s*(?:topic\s*:)?\s*([^<]*)").unwrap()
    });

    let mut buf = String::new();
    source.read_to_string(&mut buf)?;
    let mut out = Vec::new();
    for (i, cap) in top.captures_iter(&buf).enumerate() {
        let body = &cap[1];
        let query_id = num
            .captures(body)
            .ok_or_else(|| Error::malformed(i + 1, "missing <num>"))?[1]
            .to_string();
        let text = title
            .captures(body)
            .ok_or_else(|| Error::malformed(i + 1, "missing <title>"))?[1]
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        out.push(Topic::new(query_id, text));
    }
    Ok(out)
}

/// Relevance judgments: query id → document id → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    entries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        query_id: impl Into<String>,
        doc_id: impl Into<String>,
        grade: u32,
    ) -> Result<()> {
        let query_id = query_id.into();
        let doc_id = doc_id.into();
        let per_query = self.entries.entry(query_id.clone()).or_default();
        if per_query.contains_key(&doc_id) {
            return Err(Error::DuplicateJudgment { query_id, doc_id });
        }
        per_query.insert(doc_id, grade);
        Ok(())
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.entries.get(query_id)?.get(doc_id).copied()
    }

    /// Documents with grade > 0 for `query_id`.
    pub fn relevant(&self, query_id: &str) -> BTreeSet<&str> {
        self.entries
            .get(query_id)
            .map(|m| {
                m.iter()
                    .filter(|(_, &g)| g > 0)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.entries.contains_key(query_id)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes the standard four-column qrels format.
    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        for (q, docs) in &self.entries {
            for (d, g) in docs {
                writeln!(sink, "{q} 0 {d} {g}")?;
            }
        }
        Ok(())
    }
}

/// Parses TREC qrels lines `qid iter docno grade`.
pub fn load_qrels<R: Read>(source: R) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in std::io::BufReader::new(source).lines().enumerate() {
        let line = line?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() < 4 {
            return Err(Error::malformed(
                i + 1,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| Error::malformed(i + 1, format!("grade `{}` is not an integer", cols[3])))?;
        let grade = u32::try_from(grade)
            .map_err(|_| Error::malformed(i + 1, format!("grade {grade} out of range")))?;
        qrels.insert(cols[0], cols[2], grade).map_err(|e| match e {
            Error::DuplicateJudgment { .. } => Error::malformed(i + 1, e.to_string()),
            other => other,
        })?;
    }
    Ok(qrels)
}
