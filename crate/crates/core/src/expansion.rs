//! Building queries from generated texts.
//!
//! All modes count term occurrences over the concatenation of the generated
//! texts (tokenized with the experiment tokenizer) and differ only in which
//! terms are kept and how they are weighted.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Tokenizer, Topic};
use crate::error::{Error, Result};
use crate::generation::GeneratedSet;
use crate::ranking::{QueryOrigin, WeightedQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExpansionMode {
    /// Every term of the concatenation, weighted by its count.
    Full,
    /// The `k` most frequent terms, weighted by count.
    TopKFrequency { k: usize },
    /// The `k` most frequent terms, each weighted `1/k`.
    TopKFixed { k: usize },
    /// Original query terms only, weighted by their count in the texts.
    ReweightOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    #[serde(flatten)]
    pub mode: ExpansionMode,
    /// Keep the seed prefix that generators echo at the head of each text.
    #[serde(default = "yes")]
    pub include_seed_texts: bool,
    /// In reweight mode, never let a term fall below its original count.
    #[serde(default = "yes")]
    pub original_floor: bool,
}

fn yes() -> bool {
    true
}

impl ExpansionConfig {
    pub fn new(mode: ExpansionMode) -> Self {
        Self {
            mode,
            include_seed_texts: true,
            original_floor: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            ExpansionMode::TopKFrequency { k } | ExpansionMode::TopKFixed { k } if k == 0 => {
                Err(Error::InvalidParameter("expansion k must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self::new(ExpansionMode::Full)
    }
}

/// Term counts over all texts. With `include_seed` false, a leading copy of
/// the seed tokens is removed from each text first.
pub fn concatenation_counts(
    texts: &[String],
    seed: &str,
    include_seed: bool,
    tokenizer: &Tokenizer,
) -> BTreeMap<String, f64> {
    let seed_tokens = tokenizer.tokenize(seed);
    let mut counts = BTreeMap::new();
    for text in texts {
        let tokens = tokenizer.tokenize(text);
        let body = if !include_seed && !seed_tokens.is_empty() && tokens.starts_with(&seed_tokens) {
            &tokens[seed_tokens.len()..]
        } else {
            &tokens[..]
        };
        for t in body {
            *counts.entry(t.clone()).or_insert(0.0) += 1.0;
        }
    }
    counts
}

/// Terms ordered by count descending, ties by term.
fn ranked_terms(counts: &BTreeMap<String, f64>) -> Vec<(&String, f64)> {
    let mut v: Vec<(&String, f64)> = counts.iter().map(|(t, &c)| (t, c)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v
}

pub fn build_expanded_query(
    topic: &Topic,
    generated: &GeneratedSet,
    cfg: &ExpansionConfig,
    tokenizer: &Tokenizer,
) -> Result<WeightedQuery> {
    cfg.validate()?;
    if generated.query_id != topic.query_id {
        return Err(Error::InvalidParameter(format!(
            "generated set is for query `{}`, topic is `{}`",
            generated.query_id, topic.query_id
        )));
    }
    let original = WeightedQuery::from_tokens(tokenizer.tokenize(&topic.title));
    if generated.texts.is_empty() {
        return Ok(original);
    }
    let counts = concatenation_counts(
        &generated.texts,
        &topic.title,
        cfg.include_seed_texts,
        tokenizer,
    );

    match cfg.mode {
        ExpansionMode::Full => WeightedQuery::from_weights(counts, QueryOrigin::Expanded),
        ExpansionMode::TopKFrequency { k } => WeightedQuery::from_weights(
            ranked_terms(&counts).into_iter().take(k).map(|(t, c)| (t.clone(), c)),
            QueryOrigin::Expanded,
        ),
        ExpansionMode::TopKFixed { k } => {
            let w = 1.0 / k as f64;
            WeightedQuery::from_weights(
                ranked_terms(&counts).into_iter().take(k).map(|(t, _)| (t.clone(), w)),
                QueryOrigin::Expanded,
            )
        }
        ExpansionMode::ReweightOnly => WeightedQuery::from_weights(
            original.terms().iter().map(|(t, &orig)| {
                let c = counts.get(t).copied().unwrap_or(0.0);
                let w = if cfg.original_floor { c.max(orig) } else { c };
                (t.clone(), w)
            }),
            QueryOrigin::Reweighted,
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KWeighting {
    Fixed,
    Frequency,
}

/// One expanded query per `k`.
pub fn sweep_k(
    topic: &Topic,
    generated: &GeneratedSet,
    k_values: &[usize],
    weighting: KWeighting,
    include_seed_texts: bool,
    tokenizer: &Tokenizer,
) -> Result<Vec<(usize, WeightedQuery)>> {
    k_values
        .iter()
        .map(|&k| {
            let mode = match weighting {
                KWeighting::Fixed => ExpansionMode::TopKFixed { k },
                KWeighting::Frequency => ExpansionMode::TopKFrequency { k },
            };
            let cfg = ExpansionConfig {
                include_seed_texts,
                ..ExpansionConfig::new(mode)
            };
            Ok((k, build_expanded_query(topic, generated, &cfg, tokenizer)?))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryRecord {
    query_id: String,
    #[serde(flatten)]
    query: WeightedQuery,
}

/// Writes one `{"query_id", "terms", "origin"}` object per line.
pub fn write_weighted_queries<'a, W, I>(mut sink: W, queries: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a WeightedQuery)>,
{
    for (query_id, query) in queries {
        let rec = QueryRecord {
            query_id: query_id.to_string(),
            query: query.clone(),
        };
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_weighted_queries<R: BufRead>(source: R) -> Result<Vec<(String, WeightedQuery)>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QueryRecord =
            serde_json::from_str(&line).map_err(|e| Error::malformed(i + 1, e.to_string()))?;
        // re-validate weights
        let q = WeightedQuery::from_weights(rec.query.terms().clone(), rec.query.origin())
            .map_err(|e| Error::malformed(i + 1, e.to_string()))?;
        out.push((rec.query_id, q));
    }
    Ok(out)
}
