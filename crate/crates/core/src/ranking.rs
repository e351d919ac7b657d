//! BM25+ and Dirichlet-smoothed query likelihood.
//!
//! Both models score a document as `RSV(q, d) = Σ w_q(t) · w_d(t)`. The query
//! side is always a [`WeightedQuery`], whose weights play the role of the
//! query term count `c(t, q)` and may be fractional after expansion.
//!
//! Summation domain differs between the two models. BM25+ sums over terms
//! present in both query and document. The LM sums over every query term
//! known to the collection, using the `c(t, d) = 0` branch for terms the
//! document lacks; that part is computed as one per-document constant plus
//! per-posting corrections. In both cases only documents matching at least
//! one query term are ranked.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::InvertedIndex;

pub const DEFAULT_DEPTH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOrigin {
    #[default]
    Raw,
    Expanded,
    Reweighted,
}

/// Term → non-negative weight. Zero weights are never stored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightedQuery {
    terms: BTreeMap<String, f64>,
    #[serde(default)]
    origin: QueryOrigin,
}

impl WeightedQuery {
    /// Raw query: weights are occurrence counts.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut terms = BTreeMap::new();
        for t in tokens {
            *terms.entry(t.as_ref().to_string()).or_insert(0.0) += 1.0;
        }
        Self {
            terms,
            origin: QueryOrigin::Raw,
        }
    }

    pub fn from_weights<I, S>(weights: I, origin: QueryOrigin) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut terms = BTreeMap::new();
        for (t, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "query weight must be finite and non-negative, got {w}"
                )));
            }
            if w > 0.0 {
                terms.insert(t.into(), w);
            }
        }
        Ok(Self { terms, origin })
    }

    pub fn terms(&self) -> &BTreeMap<String, f64> {
        &self.terms
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.terms.get(term).copied().unwrap_or(0.0)
    }

    pub fn origin(&self) -> QueryOrigin {
        self.origin
    }

    pub fn with_origin(mut self, origin: QueryOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.terms.values().sum()
    }

    /// Weights divided by their sum (the maximum-likelihood query model).
    pub fn normalized(&self) -> Self {
        let total = self.total_weight();
        if total <= 0.0 {
            return self.clone();
        }
        Self {
            terms: self
                .terms
                .iter()
                .map(|(t, w)| (t.clone(), w / total))
                .collect(),
            origin: self.origin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub k3: f64,
    pub b: f64,
    pub delta: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 1.2,
            k3: 1000.0,
            b: 0.75,
            delta: 1.0,
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k3 > 0.0) {
            return Err(Error::InvalidParameter("BM25+ needs k1 > 0 and k3 > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidParameter("BM25+ b must lie in [0, 1]".into()));
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(Error::InvalidParameter("BM25+ delta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirichletParams {
    pub mu: f64,
}

impl Default for DirichletParams {
    fn default() -> Self {
        Self { mu: 2500.0 }
    }
}

impl DirichletParams {
    pub fn validate(&self) -> Result<()> {
        if self.mu.is_nan() || self.mu <= 0.0 {
            return Err(Error::InvalidParameter("Dirichlet mu must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ScoringModel {
    Bm25Plus(Bm25Params),
    LmDirichlet(DirichletParams),
}

impl Default for ScoringModel {
    fn default() -> Self {
        Self::Bm25Plus(Bm25Params::default())
    }
}

impl ScoringModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Bm25Plus(p) => p.validate(),
            Self::LmDirichlet(p) => p.validate(),
        }
    }
}

/// BM25+ document-side weight for a term present in the document.
///
/// Requires `tf >= 1` and `1 <= df <= n_docs`.
pub fn bm25plus_wd(tf: f64, dl: f64, avdl: f64, n_docs: f64, df: f64, p: &Bm25Params) -> f64 {
    debug_assert!(df >= 1.0, "unseen terms must be skipped");
    let norm = p.k1 * (1.0 - p.b + p.b * dl / avdl);
    ((p.k1 + 1.0) * tf / (norm + tf) + p.delta) * ((n_docs + 1.0) / df).ln()
}

/// BM25+ query-side weight; saturates at `k3 + 1`.
pub fn bm25plus_wq(weight: f64, p: &Bm25Params) -> f64 {
    (p.k3 + 1.0) * weight / (p.k3 + weight)
}

/// Dirichlet LM document-side weight, `ln(μ/(dl+μ) + tf/((dl+μ)·p(t|C)))`.
///
/// Requires `p_collection > 0`.
pub fn lm_dirichlet_wd(tf: f64, dl: f64, mu: f64, p_collection: f64) -> f64 {
    debug_assert!(p_collection > 0.0, "terms unseen in the collection must be skipped");
    (mu / (dl + mu) + tf / ((dl + mu) * p_collection)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Ranks documents for `query`. Returns at most `depth` hits ordered by
/// descending score, ties broken by ascending doc id.
pub fn score_all(
    index: &InvertedIndex,
    query: &WeightedQuery,
    model: &ScoringModel,
    depth: usize,
) -> Vec<Hit> {
    let n = index.num_docs();
    let mut acc = vec![0.0f64; n];
    let mut matched = vec![false; n];
    let mut touched: Vec<u32> = Vec::new();
    let stats = index.stats();

    match model {
        ScoringModel::Bm25Plus(p) => {
            for (term, &w) in query.terms() {
                let Some(entry) = index.term(term) else {
                    continue;
                };
                let wq = bm25plus_wq(w, p);
                let df = entry.df() as f64;
                for posting in &entry.postings {
                    let d = posting.doc as usize;
                    if !matched[d] {
                        matched[d] = true;
                        touched.push(posting.doc);
                    }
                    acc[d] += wq
                        * bm25plus_wd(
                            f64::from(posting.tf),
                            f64::from(stats.doc_lengths[d]),
                            stats.avdl,
                            n as f64,
                            df,
                            p,
                        );
                }
            }
        }
        ScoringModel::LmDirichlet(p) => {
            let mut known_weight = 0.0;
            for (term, &w) in query.terms() {
                let Some(entry) = index.term(term) else {
                    continue;
                };
                known_weight += w;
                let p_c = entry.collection_tf as f64 / stats.total_tokens as f64;
                for posting in &entry.postings {
                    let d = posting.doc as usize;
                    if !matched[d] {
                        matched[d] = true;
                        touched.push(posting.doc);
                    }
                    // w_d(tf) - w_d(0) = ln(1 + tf / (μ p(t|C))), independent of dl.
                    acc[d] += w * (f64::from(posting.tf) / (p.mu * p_c)).ln_1p();
                }
            }
            for &d in &touched {
                let dl = f64::from(stats.doc_lengths[d as usize]);
                acc[d as usize] += known_weight * (p.mu / (dl + p.mu)).ln();
            }
        }
    }

    let mut hits: Vec<Hit> = touched
        .into_iter()
        .map(|d| Hit {
            doc_id: index.doc_id(d).to_string(),
            score: acc[d as usize],
        })
        .collect();
    sort_hits(&mut hits);
    hits.truncate(depth);
    hits
}

pub fn sort_hits(hits: &mut [Hit]) {
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

/// Ranked output for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub query_id: String,
    pub hits: Vec<Hit>,
    pub run_tag: String,
}

impl RunResult {
    pub fn new(query_id: impl Into<String>, mut hits: Vec<Hit>, run_tag: impl Into<String>) -> Self {
        sort_hits(&mut hits);
        Self {
            query_id: query_id.into(),
            hits,
            run_tag: run_tag.into(),
        }
    }

    /// Writes `query_id Q0 doc_id rank score run_tag` lines, rank from 1.
    pub fn write_trec<W: Write>(&self, mut sink: W) -> Result<()> {
        for (i, hit) in self.hits.iter().enumerate() {
            writeln!(
                sink,
                "{} Q0 {} {} {} {}",
                self.query_id,
                hit.doc_id,
                i + 1,
                format_score(hit.score),
                self.run_tag
            )?;
        }
        Ok(())
    }
}

/// Fixed-point rendering with at least 10 significant digits.
pub fn format_score(score: f64) -> String {
    if score == 0.0 || !score.is_finite() {
        return format!("{score:.9}");
    }
    let magnitude = score.abs().log10().floor() as i32;
    let decimals = (9 - magnitude).clamp(0, 30) as usize;
    format!("{score:.decimals$}")
}
