//! RM3 pseudo-relevance feedback.
//!
//! The relevance model is `p(t|R) ∝ Σ_d p(t|d) · p(q|d)` over the top
//! feedback documents, with `p(t|d)` Dirichlet-smoothed and `p(q|d)` the
//! exponentiated query-likelihood score. The top `fb_terms` terms are kept,
//! renormalized, and interpolated with the maximum-likelihood query model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::ranking::{lm_dirichlet_wd, DirichletParams, Hit, QueryOrigin, WeightedQuery};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rm3Config {
    pub fb_docs: usize,
    pub fb_terms: usize,
    /// Interpolation weight of the original query model.
    pub lambda_orig: f64,
}

impl Default for Rm3Config {
    fn default() -> Self {
        Self {
            fb_docs: 10,
            fb_terms: 100,
            lambda_orig: 0.5,
        }
    }
}

impl Rm3Config {
    pub fn validate(&self) -> Result<()> {
        if self.fb_docs == 0 || self.fb_terms == 0 {
            return Err(Error::InvalidParameter(
                "RM3 fb_docs and fb_terms must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_orig) {
            return Err(Error::InvalidParameter(
                "RM3 lambda_orig must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rm3Expansion {
    pub query: WeightedQuery,
    /// Number of feedback documents actually used; 0 means the original
    /// query was returned unchanged (normalized).
    pub feedback_docs: usize,
}

/// Expands `query` from the top of `first_pass`.
pub fn rm3_expand(
    index: &InvertedIndex,
    query: &WeightedQuery,
    first_pass: &[Hit],
    cfg: &Rm3Config,
    smoothing: &DirichletParams,
) -> Result<Rm3Expansion> {
    cfg.validate()?;
    smoothing.validate()?;
    let original = query.normalized().with_origin(QueryOrigin::Expanded);

    let feedback: Vec<u32> = first_pass
        .iter()
        .take(cfg.fb_docs)
        .filter_map(|h| index.doc_ordinal(&h.doc_id))
        .collect();
    if feedback.is_empty() || cfg.lambda_orig == 1.0 {
        return Ok(Rm3Expansion {
            query: original,
            feedback_docs: if feedback.is_empty() { 0 } else { feedback.len() },
        });
    }

    let relevance = relevance_model(index, query, &feedback, cfg.fb_terms, smoothing.mu);

    let lambda = cfg.lambda_orig;
    let mut mixed: BTreeMap<String, f64> = BTreeMap::new();
    for (t, &p) in original.terms() {
        *mixed.entry(t.clone()).or_insert(0.0) += lambda * p;
    }
    for (t, p) in relevance {
        *mixed.entry(t).or_insert(0.0) += (1.0 - lambda) * p;
    }
    let total: f64 = mixed.values().sum();
    let expanded = WeightedQuery::from_weights(
        mixed.into_iter().map(|(t, w)| (t, w / total)),
        QueryOrigin::Expanded,
    )?;
    Ok(Rm3Expansion {
        query: expanded,
        feedback_docs: feedback.len(),
    })
}

/// Truncated, normalized relevance model, highest probability first (ties
/// by term).
pub fn relevance_model(
    index: &InvertedIndex,
    query: &WeightedQuery,
    feedback: &[u32],
    fb_terms: usize,
    mu: f64,
) -> Vec<(String, f64)> {
    let stats = index.stats();
    let total_tokens = stats.total_tokens as f64;

    // log p(q|d) up to a document-independent constant.
    let log_ql: Vec<f64> = feedback
        .iter()
        .map(|&d| {
            let dl = f64::from(index.doc_len(d));
            query
                .terms()
                .iter()
                .filter_map(|(t, &w)| {
                    let entry = index.term(t)?;
                    let p_c = entry.collection_tf as f64 / total_tokens;
                    Some(w * lm_dirichlet_wd(f64::from(index.tf(t, d)), dl, mu, p_c))
                })
                .sum()
        })
        .collect();
    let max = log_ql.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let doc_weights: Vec<f64> = log_ql.iter().map(|l| (l - max).exp()).collect();
    let weight_sum: f64 = doc_weights.iter().sum();

    let stop = index.tokenization();
    let mut model: BTreeMap<u32, f64> = BTreeMap::new();
    for (&d, &qw) in feedback.iter().zip(&doc_weights) {
        let qw = qw / weight_sum;
        let dl = f64::from(index.doc_len(d));
        for &(term, tf) in index.doc_terms(d) {
            if stop.is_stopword(index.term_name(term)) {
                continue;
            }
            let p_c = index.term_entry(term).collection_tf as f64 / total_tokens;
            let p_td = (f64::from(tf) + mu * p_c) / (dl + mu);
            *model.entry(term).or_insert(0.0) += p_td * qw;
        }
    }

    let mut ranked: Vec<(String, f64)> = model
        .into_iter()
        .map(|(id, p)| (index.term_name(id).to_string(), p))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(fb_terms);
    let kept: f64 = ranked.iter().map(|(_, p)| p).sum();
    for (_, p) in &mut ranked {
        *p /= kept;
    }
    ranked
}
