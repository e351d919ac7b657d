//! Naive reference implementations used to cross-check the engine.
//!
//! Everything here recomputes statistics from raw token lists with plain
//! loops and shares no code with the index or the evaluator.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use qgen_core::eval::{evaluate_run, Run, RunEntry};
use qgen_core::ranking::{score_all, Bm25Params, DirichletParams, QueryOrigin, ScoringModel};
use qgen_core::{Document, InvertedIndex, Qrels, TokenizationConfig, WeightedQuery};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Corpus = Vec<(String, Vec<String>)>;

/// Scores every document containing a query term, best first.
pub fn naive_score(
    corpus: &Corpus,
    query: &BTreeMap<String, f64>,
    model: &ScoringModel,
) -> Vec<(String, f64)> {
    let n = corpus.len() as f64;
    let total: usize = corpus.iter().map(|(_, t)| t.len()).sum();
    let avdl = total as f64 / n;
    let count = |toks: &[String], term: &str| toks.iter().filter(|t| *t == term).count() as f64;

    let mut out = Vec::new();
    for (id, toks) in corpus {
        if !query.keys().any(|t| toks.contains(t)) {
            continue;
        }
        let dl = toks.len() as f64;
        let mut score = 0.0;
        for (term, &w) in query {
            let df = corpus.iter().filter(|(_, d)| d.contains(term)).count() as f64;
            let ctf: f64 = corpus.iter().map(|(_, d)| count(d, term)).sum();
            let tf = count(toks, term);
            match model {
                ScoringModel::Bm25Plus(p) => {
                    if tf == 0.0 {
                        continue;
                    }
                    let idf = ((n + 1.0) / df).ln();
                    let norm = p.k1 * (1.0 - p.b + p.b * dl / avdl);
                    let wd = ((p.k1 + 1.0) * tf / (norm + tf) + p.delta) * idf;
                    let wq = (p.k3 + 1.0) * w / (p.k3 + w);
                    score += wq * wd;
                }
                ScoringModel::LmDirichlet(p) => {
                    if ctf == 0.0 {
                        continue;
                    }
                    let pc = ctf / total as f64;
                    let wd = (p.mu / (dl + p.mu) + tf / ((dl + p.mu) * pc)).ln();
                    score += w * wd;
                }
            }
        }
        out.push((id.clone(), score));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

const WORDS: [&str; 12] = [
    "oil", "gas", "price", "coffee", "station", "tax", "zinc", "crude", "barrel", "export", "tariff", "well",
];

pub fn random_corpus(rng: &mut impl Rng) -> Corpus {
    let docs = rng.random_range(1..=8);
    let vocab = rng.random_range(2..=WORDS.len());
    let mut corpus: Corpus = (0..docs)
        .map(|i| {
            let len = rng.random_range(0..=10);
            let toks = (0..len)
                .map(|_| WORDS[rng.random_range(0..vocab)].to_string())
                .collect();
            (format!("d{i}"), toks)
        })
        .collect();
    if corpus.iter().all(|(_, t)| t.is_empty()) {
        corpus[0].1.push(WORDS[0].to_string());
    }
    corpus
}

/// Query terms may fall outside the corpus vocabulary.
pub fn random_query(rng: &mut impl Rng) -> BTreeMap<String, f64> {
    let mut q = BTreeMap::new();
    for _ in 0..rng.random_range(1..=4) {
        let t = WORDS[rng.random_range(0..WORDS.len())].to_string();
        *q.entry(t).or_insert(0.0) += f64::from(rng.random_range(1..=3u8));
    }
    q
}

pub fn random_model(rng: &mut impl Rng) -> ScoringModel {
    if rng.random_bool(0.5) {
        ScoringModel::Bm25Plus(Bm25Params {
            k1: rng.random_range(0.3..2.5),
            b: rng.random_range(0.0..=1.0),
            k3: [1.0, 8.0, 1000.0][rng.random_range(0..3)],
            delta: [0.0, 0.5, 1.0][rng.random_range(0..3)],
        })
    } else {
        ScoringModel::LmDirichlet(DirichletParams {
            mu: [1.0, 10.0, 100.0, 2500.0][rng.random_range(0..4)],
        })
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Engine ranking against the naive scorer on `cases` random micro-corpora.
/// Returns the number of cases checked.
pub fn check_scoring(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TokenizationConfig::default();
    for case in 0..cases {
        let corpus = random_corpus(&mut rng);
        let query = random_query(&mut rng);
        let model = random_model(&mut rng);
        let docs: Vec<Document> = corpus
            .iter()
            .map(|(id, toks)| Document {
                doc_id: id.clone(),
                text: toks.join(" "),
                tokens: toks.clone(),
            })
            .collect();
        let index = InvertedIndex::build(&docs, &cfg).map_err(|e| e.to_string())?;
        let wq = WeightedQuery::from_weights(query.clone(), QueryOrigin::Raw)
            .map_err(|e| e.to_string())?;
        let got = score_all(&index, &wq, &model, usize::MAX);
        let want = naive_score(&corpus, &query, &model);
        let fail = |why: String| {
            Err(format!(
                "case {case}: {why}\n corpus {corpus:?}\n query {query:?}\n model {model:?}\n got {got:?}\n want {want:?}"
            ))
        };
        if got.len() != want.len() {
            return fail("different number of hits".into());
        }
        let want_by_id: BTreeMap<&str, f64> = want.iter().map(|(d, s)| (d.as_str(), *s)).collect();
        for h in &got {
            match want_by_id.get(h.doc_id.as_str()) {
                Some(&s) if close(h.score, s, 1e-9) => {}
                _ => return fail(format!("score mismatch on {}", h.doc_id)),
            }
        }
        for pair in got.windows(2) {
            let ordered = pair[0].score > pair[1].score
                || (pair[0].score == pair[1].score && pair[0].doc_id < pair[1].doc_id);
            if !ordered {
                return fail("hits out of order".into());
            }
        }
        // the oracle's order must agree wherever its scores are separated
        for pair in want.windows(2) {
            if pair[0].1 - pair[1].1 > 1e-9 {
                let pos = |id: &str| got.iter().position(|h| h.doc_id == id).unwrap();
                if pos(&pair[0].0) > pos(&pair[1].0) {
                    return fail("ranking disagrees with oracle".into());
                }
            }
        }
    }
    Ok(cases)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveMetrics {
    pub ap: f64,
    pub r_prec: f64,
    pub p: [f64; 4],
}

pub fn naive_metrics(ranked: &[String], relevant: &BTreeSet<String>) -> NaiveMetrics {
    let r = relevant.len();
    let rel_at = |i: usize| ranked.get(i).is_some_and(|d| relevant.contains(d));
    let mut ap = 0.0;
    for i in 0..ranked.len() {
        if rel_at(i) {
            let above = (0..=i).filter(|&j| rel_at(j)).count();
            ap += above as f64 / (i + 1) as f64;
        }
    }
    let prec = |k: usize| (0..k).filter(|&j| rel_at(j)).count() as f64 / k as f64;
    NaiveMetrics {
        ap: ap / r as f64,
        r_prec: prec(r),
        p: [prec(5), prec(10), prec(20), prec(100)],
    }
}

pub struct EvalCase {
    pub run: BTreeMap<String, Vec<String>>,
    pub qrels: BTreeMap<String, BTreeMap<String, u32>>,
}

pub fn random_eval_case(rng: &mut impl Rng) -> EvalCase {
    let pool: Vec<String> = (0..rng.random_range(1..=150)).map(|i| format!("D{i}")).collect();
    let mut run = BTreeMap::new();
    let mut qrels = BTreeMap::new();
    for q in 0..rng.random_range(1..=5) {
        let qid = format!("q{q}");
        if rng.random_bool(0.9) {
            let mut docs = pool.clone();
            docs.shuffle(rng);
            docs.truncate(rng.random_range(0..=pool.len()));
            run.insert(qid.clone(), docs);
        }
        if rng.random_bool(0.9) {
            let mut judged = BTreeMap::new();
            for d in &pool {
                if rng.random_bool(0.4) {
                    judged.insert(d.clone(), rng.random_range(0..=2u32));
                }
            }
            qrels.insert(qid, judged);
        }
    }
    EvalCase { run, qrels }
}

/// Engine metrics against the naive evaluator on `cases` random
/// (run, qrels) pairs. Returns the largest absolute difference seen.
pub fn check_metrics(cases: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let EvalCase { run, qrels } = random_eval_case(&mut rng);
        let mut engine_qrels = Qrels::new();
        for (q, judged) in &qrels {
            for (d, &g) in judged {
                engine_qrels.insert(q.clone(), d.clone(), g).map_err(|e| e.to_string())?;
            }
        }
        let engine_run = Run {
            by_query: run
                .iter()
                .map(|(q, docs)| {
                    let entries = docs
                        .iter()
                        .enumerate()
                        .map(|(i, d)| RunEntry {
                            doc_id: d.clone(),
                            rank: i as u64 + 1,
                            score: -(i as f64),
                        })
                        .collect();
                    (q.clone(), entries)
                })
                .collect(),
        };
        let report = evaluate_run(&engine_run, &engine_qrels, usize::MAX).map_err(|e| e.to_string())?;

        let mut expected = BTreeMap::new();
        for (q, judged) in &qrels {
            let relevant: BTreeSet<String> =
                judged.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d.clone()).collect();
            if relevant.is_empty() {
                continue;
            }
            let ranked = run.get(q).cloned().unwrap_or_default();
            expected.insert(q.clone(), naive_metrics(&ranked, &relevant));
        }
        if expected.keys().ne(report.per_query.keys()) {
            return Err(format!("case {case}: evaluated query sets differ"));
        }
        let mut sums = [0.0; 6];
        for (q, m) in &expected {
            let got = &report.per_query[q];
            let pairs = [
                (got.ap, m.ap),
                (got.r_prec, m.r_prec),
                (got.p5, m.p[0]),
                (got.p10, m.p[1]),
                (got.p20, m.p[2]),
                (got.p100, m.p[3]),
            ];
            for (i, (g, w)) in pairs.into_iter().enumerate() {
                worst = worst.max((g - w).abs());
                sums[i] += w;
            }
        }
        if !expected.is_empty() {
            let n = expected.len() as f64;
            worst = worst.max((report.map() - sums[0] / n).abs());
            worst = worst.max((report.aggregate.p10 - sums[3] / n).abs());
        }
        if worst > 1e-12 {
            return Err(format!("case {case}: metric deviation {worst:e}"));
        }
    }
    Ok(worst)
}
