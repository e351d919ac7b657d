//! In-memory inverted index with the collection statistics used by BM25+ and
//! Dirichlet-smoothed language models.
//!
//! The persisted image is a single file:
//!
//! ```text
//! magic "QGENIDX\0" | version u32 | payload length u64 | payload | crc32(payload) u32
//! ```
//!
//! All integers are little-endian. The payload holds the tokenization
//! fingerprint and config, the document table (external id, length), and the
//! dictionary with postings, terms in lexicographic order.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::{Document, TokenizationConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"QGENIDX\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TermEntry {
    pub collection_tf: u64,
    pub postings: Vec<Posting>,
}

impl TermEntry {
    pub fn df(&self) -> usize {
        self.postings.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexStats {
    pub num_docs: usize,
    pub total_tokens: u64,
    pub avdl: f64,
    pub doc_lengths: Vec<u32>,
}

/// Term ids are ranks in lexicographic term order, so the same collection
/// always yields the same ids whether built or loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    term_names: Vec<String>,
    entries: Vec<TermEntry>,
    term_lookup: HashMap<String, u32>,
    /// Per-document (term id, tf) pairs, term ids ascending.
    forward: Vec<Vec<(u32, u32)>>,
    stats: IndexStats,
    doc_ids: Vec<String>,
    doc_lookup: HashMap<String, u32>,
    tokenization: TokenizationConfig,
    fingerprint: String,
}

impl InvertedIndex {
    /// Builds the index. Document ordinals follow input order.
    pub fn build(docs: &[Document], tokenization: &TokenizationConfig) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCollection);
        }
        let mut terms: BTreeMap<String, TermEntry> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_lookup = HashMap::with_capacity(docs.len());
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut total_tokens = 0u64;

        for (ordinal, doc) in docs.iter().enumerate() {
            let ordinal = u32::try_from(ordinal)
                .map_err(|_| Error::InvalidParameter("too many documents".into()))?;
            if doc_lookup.insert(doc.doc_id.clone(), ordinal).is_some() {
                return Err(Error::DuplicateDocId(doc.doc_id.clone()));
            }
            doc_ids.push(doc.doc_id.clone());
            doc_lengths.push(doc.tokens.len() as u32);
            total_tokens += doc.tokens.len() as u64;

            let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &doc.tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (term, tf) in counts {
                let entry = match terms.get_mut(term) {
                    Some(e) => e,
                    None => terms.entry(term.to_string()).or_default(),
                };
                entry.collection_tf += u64::from(tf);
                entry.postings.push(Posting { doc: ordinal, tf });
            }
        }

        Ok(Self::assemble(
            terms.into_iter().collect(),
            doc_ids,
            doc_lookup,
            doc_lengths,
            total_tokens,
            tokenization.clone(),
        ))
    }

    /// `terms` must be sorted by term.
    fn assemble(
        terms: Vec<(String, TermEntry)>,
        doc_ids: Vec<String>,
        doc_lookup: HashMap<String, u32>,
        doc_lengths: Vec<u32>,
        total_tokens: u64,
        tokenization: TokenizationConfig,
    ) -> Self {
        let num_docs = doc_ids.len();
        let mut forward = vec![Vec::new(); num_docs];
        let mut term_names = Vec::with_capacity(terms.len());
        let mut entries = Vec::with_capacity(terms.len());
        let mut term_lookup = HashMap::with_capacity(terms.len());
        for (id, (term, entry)) in terms.into_iter().enumerate() {
            let id = id as u32;
            for p in &entry.postings {
                forward[p.doc as usize].push((id, p.tf));
            }
            term_lookup.insert(term.clone(), id);
            term_names.push(term);
            entries.push(entry);
        }
        Self {
            term_names,
            entries,
            term_lookup,
            forward,
            stats: IndexStats {
                num_docs,
                total_tokens,
                avdl: total_tokens as f64 / num_docs as f64,
                doc_lengths,
            },
            doc_ids,
            doc_lookup,
            fingerprint: tokenization.fingerprint(),
            tokenization,
        }
    }

    pub fn stats(&self) -> &IndexStats {
        &self.stats
    }

    pub fn num_docs(&self) -> usize {
        self.stats.num_docs
    }

    pub fn num_terms(&self) -> usize {
        self.entries.len()
    }

    pub fn term(&self, term: &str) -> Option<&TermEntry> {
        self.term_id(term).map(|id| &self.entries[id as usize])
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.term_lookup.get(term).copied()
    }

    pub fn term_name(&self, id: u32) -> &str {
        &self.term_names[id as usize]
    }

    pub fn term_entry(&self, id: u32) -> &TermEntry {
        &self.entries[id as usize]
    }

    /// Dictionary in lexicographic order.
    pub fn terms(&self) -> impl Iterator<Item = (&str, &TermEntry)> {
        self.term_names.iter().map(String::as_str).zip(&self.entries)
    }

    /// (term id, tf) pairs of one document, term ids ascending.
    pub fn doc_terms(&self, doc: u32) -> &[(u32, u32)] {
        &self.forward[doc as usize]
    }

    pub fn df(&self, term: &str) -> usize {
        self.term(term).map_or(0, TermEntry::df)
    }

    pub fn collection_tf(&self, term: &str) -> u64 {
        self.term(term).map_or(0, |e| e.collection_tf)
    }

    /// Collection language model p(t|C) = collection_tf(t) / total_tokens.
    pub fn p_collection(&self, term: &str) -> f64 {
        if self.stats.total_tokens == 0 {
            return 0.0;
        }
        self.collection_tf(term) as f64 / self.stats.total_tokens as f64
    }

    /// Term frequency of `term` in the document with the given ordinal.
    pub fn tf(&self, term: &str, doc: u32) -> u32 {
        self.term(term)
            .and_then(|e| {
                e.postings
                    .binary_search_by_key(&doc, |p| p.doc)
                    .ok()
                    .map(|i| e.postings[i].tf)
            })
            .unwrap_or(0)
    }

    pub fn doc_len(&self, doc: u32) -> u32 {
        self.stats.doc_lengths[doc as usize]
    }

    pub fn doc_id(&self, doc: u32) -> &str {
        &self.doc_ids[doc as usize]
    }

    pub fn doc_ordinal(&self, doc_id: &str) -> Option<u32> {
        self.doc_lookup.get(doc_id).copied()
    }

    pub fn tokenization(&self) -> &TokenizationConfig {
        &self.tokenization
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Rejects query-side processing under a different tokenization.
    pub fn ensure_compatible(&self, query_side: &TokenizationConfig) -> Result<()> {
        let query = query_side.fingerprint();
        if query != self.fingerprint {
            return Err(Error::TokenizationMismatch {
                index: self.fingerprint.clone(),
                query,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(Error::at(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(Error::at(path))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut p = Vec::new();
        put_str(&mut p, &self.fingerprint);
        put_str(
            &mut p,
            &serde_json::to_string(&self.tokenization).expect("config serializes"),
        );
        put_u32(&mut p, self.stats.num_docs as u32);
        put_u64(&mut p, self.stats.total_tokens);
        for (id, &dl) in self.doc_ids.iter().zip(&self.stats.doc_lengths) {
            put_str(&mut p, id);
            put_u32(&mut p, dl);
        }
        put_u32(&mut p, self.entries.len() as u32);
        for (term, entry) in self.terms() {
            put_str(&mut p, term);
            put_u64(&mut p, entry.collection_tf);
            put_u32(&mut p, entry.postings.len() as u32);
            for posting in &entry.postings {
                put_u32(&mut p, posting.doc);
                put_u32(&mut p, posting.tf);
            }
        }

        let mut out = Vec::with_capacity(p.len() + 24);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u64(&mut out, p.len() as u64);
        out.extend_from_slice(&p);
        put_u32(&mut out, crc32fast::hash(&p));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::IndexFormat("bad magic bytes".into()));
        }
        let mut header = Reader::new(&bytes[MAGIC.len()..]);
        let version = header.u32().map_err(|_| truncated())?;
        if version != FORMAT_VERSION {
            return Err(Error::IndexVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let len = header.u64().map_err(|_| truncated())? as usize;
        let rest = header.rest();
        if rest.len() < len.saturating_add(4) {
            return Err(truncated());
        }
        if rest.len() > len + 4 {
            return Err(Error::Checksum("trailing bytes after checksum".into()));
        }
        let payload = &rest[..len];
        let stored = u32::from_le_bytes(rest[len..len + 4].try_into().unwrap());
        if crc32fast::hash(payload) != stored {
            return Err(Error::Checksum("crc32 mismatch".into()));
        }
        Self::parse_payload(payload)
    }

    fn parse_payload(payload: &[u8]) -> Result<Self> {
        let mut r = Reader::new(payload);
        let fingerprint = r.string()?;
        let tokenization: TokenizationConfig = serde_json::from_str(&r.string()?)?;
        if tokenization.fingerprint() != fingerprint {
            return Err(Error::IndexFormat(
                "stored fingerprint does not match stored tokenization".into(),
            ));
        }
        let num_docs = r.u32()? as usize;
        if num_docs == 0 {
            return Err(Error::EmptyCollection);
        }
        let total_tokens = r.u64()?;
        let mut doc_ids = Vec::with_capacity(num_docs);
        let mut doc_lookup = HashMap::with_capacity(num_docs);
        let mut doc_lengths = Vec::with_capacity(num_docs);
        for ordinal in 0..num_docs as u32 {
            let id = r.string()?;
            if doc_lookup.insert(id.clone(), ordinal).is_some() {
                return Err(Error::DuplicateDocId(id));
            }
            doc_ids.push(id);
            doc_lengths.push(r.u32()?);
        }
        let n_terms = r.u32()? as usize;
        let mut terms: Vec<(String, TermEntry)> = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            let term = r.string()?;
            let collection_tf = r.u64()?;
            let df = r.u32()? as usize;
            let mut postings = Vec::with_capacity(df);
            for _ in 0..df {
                let doc = r.u32()?;
                let tf = r.u32()?;
                if doc as usize >= num_docs || tf == 0 {
                    return Err(Error::IndexFormat(format!("bad posting for `{term}`")));
                }
                if postings.last().is_some_and(|p: &Posting| p.doc >= doc) {
                    return Err(Error::IndexFormat(format!("unsorted postings for `{term}`")));
                }
                postings.push(Posting { doc, tf });
            }
            if terms.last().is_some_and(|(prev, _)| *prev >= term) {
                return Err(Error::IndexFormat("dictionary not sorted".into()));
            }
            terms.push((
                term,
                TermEntry {
                    collection_tf,
                    postings,
                },
            ));
        }
        if !r.rest().is_empty() {
            return Err(Error::IndexFormat("unexpected bytes after dictionary".into()));
        }
        Ok(Self::assemble(
            terms,
            doc_ids,
            doc_lookup,
            doc_lengths,
            total_tokens,
            tokenization,
        ))
    }
}

fn truncated() -> Error {
    Error::Checksum("file truncated".into())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::IndexFormat("unexpected end of payload".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::IndexFormat("invalid utf-8".into()))
    }

    fn rest(&self) -> &'a [u8] {
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tokenizer;

    fn toy() -> InvertedIndex {
        let tok = Tokenizer::new(TokenizationConfig::default()).unwrap();
        let docs = vec![
            Document::new("d1", "oil oil price", &tok),
            Document::new("d2", "gas price", &tok),
        ];
        InvertedIndex::build(&docs, tok.config()).unwrap()
    }

    #[test]
    fn toy_statistics() {
        let idx = toy();
        assert_eq!(idx.num_docs(), 2);
        assert_eq!(idx.stats().avdl, 2.5);
        assert_eq!(idx.stats().total_tokens, 5);
        assert_eq!(idx.df("oil"), 1);
        assert_eq!(idx.df("price"), 2);
        assert_eq!(idx.df("missing"), 0);
        assert_eq!(idx.tf("oil", 0), 2);
        assert_eq!(idx.tf("oil", 1), 0);
        assert_eq!(idx.p_collection("oil"), 0.4);
        assert_eq!(idx.doc_ordinal("d2"), Some(1));
    }

    #[test]
    fn single_document_mean_is_its_length() {
        let tok = Tokenizer::new(TokenizationConfig::default()).unwrap();
        let idx =
            InvertedIndex::build(&[Document::new("only", "a b c d", &tok)], tok.config()).unwrap();
        assert_eq!(idx.stats().avdl, 4.0);
    }

    #[test]
    fn empty_corpus_rejected() {
        let err = InvertedIndex::build(&[], &TokenizationConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty collection");
    }

    #[test]
    fn truncated_image_fails_checksum() {
        let bytes = toy().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 14] {
            let err = InvertedIndex::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checksum(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn flipped_bit_fails_checksum() {
        let mut bytes = toy().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(matches!(
            InvertedIndex::from_bytes(&bytes),
            Err(Error::Checksum(_))
        ));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = toy().to_bytes();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            InvertedIndex::from_bytes(&bytes),
            Err(Error::IndexVersion { found: 99, .. })
        ));
        assert!(matches!(
            InvertedIndex::from_bytes(b"NOTANIDX0000"),
            Err(Error::IndexFormat(_))
        ));
    }

    #[test]
    fn tokenization_mismatch_rejected() {
        let idx = toy();
        idx.ensure_compatible(&TokenizationConfig::default()).unwrap();
        let other = TokenizationConfig::default().with_stopwords(["the"]);
        assert!(matches!(
            idx.ensure_compatible(&other),
            Err(Error::TokenizationMismatch { .. })
        ));
    }
}
