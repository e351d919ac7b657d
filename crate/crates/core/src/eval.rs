//! TREC-style evaluation: MAP, R-precision, P@k and paired t-tests.
//!
//! Relevance is binary (grade > 0). Queries without any relevant document
//! are left out of the means; judged queries missing from a run score 0.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::Qrels;
use crate::error::{Error, Result};
use crate::ranking::{format_score, RunResult};

pub const CUTOFFS: [usize; 4] = [5, 10, 20, 100];
pub const DEFAULT_EVAL_DEPTH: usize = 1000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

fn check_unique(ranked: &[&str]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ranked.len());
    for d in ranked {
        if !seen.insert(*d) {
            return Err(Error::DuplicateInRun {
                query_id: String::new(),
                doc_id: d.to_string(),
            });
        }
    }
    Ok(())
}

/// Average precision; relevant documents never retrieved contribute 0.
pub fn average_precision(ranked: &[&str], relevant: &BTreeSet<&str>) -> Result<f64> {
    check_unique(ranked)?;
    if relevant.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranked.iter().enumerate() {
        if relevant.contains(d) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Fraction of the first `k` positions holding a relevant document; short
/// runs count missing positions as non-relevant.
pub fn precision_at(ranked: &[&str], relevant: &BTreeSet<&str>, k: usize) -> f64 {
    assert!(k >= 1, "precision cutoff must be >= 1");
    let hits = ranked.iter().take(k).filter(|d| relevant.contains(*d)).count();
    hits as f64 / k as f64
}

pub fn r_precision(ranked: &[&str], relevant: &BTreeSet<&str>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    precision_at(ranked, relevant, relevant.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub ap: f64,
    pub r_prec: f64,
    pub p5: f64,
    pub p10: f64,
    pub p20: f64,
    pub p100: f64,
}

impl QueryMetrics {
    pub fn compute(ranked: &[&str], relevant: &BTreeSet<&str>) -> Result<Self> {
        Ok(Self {
            ap: average_precision(ranked, relevant)?,
            r_prec: r_precision(ranked, relevant),
            p5: precision_at(ranked, relevant, 5),
            p10: precision_at(ranked, relevant, 10),
            p20: precision_at(ranked, relevant, 20),
            p100: precision_at(ranked, relevant, 100),
        })
    }

    fn values(&self) -> [f64; 6] {
        [self.ap, self.r_prec, self.p5, self.p10, self.p20, self.p100]
    }

    fn mean<'a>(items: impl IntoIterator<Item = &'a QueryMetrics>) -> Self {
        let mut sum = [0.0; 6];
        let mut n = 0usize;
        for m in items {
            for (s, v) in sum.iter_mut().zip(m.values()) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return Self::default();
        }
        let [ap, r_prec, p5, p10, p20, p100] = sum.map(|s| s / n as f64);
        Self {
            ap,
            r_prec,
            p5,
            p10,
            p20,
            p100,
        }
    }
}

pub const COLUMNS: [&str; 6] = ["MAP", "R-Prec", "P@5", "P@10", "P@20", "P@100"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    /// Means over `per_query`.
    pub aggregate: QueryMetrics,
    pub num_queries: usize,
    /// Judged queries with no relevant document (excluded from means).
    pub no_relevant: Vec<String>,
    /// Run queries absent from the qrels (skipped).
    pub unknown_queries: Vec<String>,
}

impl EvalReport {
    pub fn map(&self) -> f64 {
        self.aggregate.ap
    }

    pub fn ap_by_query(&self) -> BTreeMap<String, f64> {
        self.per_query.iter().map(|(q, m)| (q.clone(), m.ap)).collect()
    }

    /// One row per query plus a final `all` row.
    pub fn write_tsv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "query_id\t{}", COLUMNS.join("\t"))?;
        let row = |sink: &mut W, id: &str, m: &QueryMetrics| -> Result<()> {
            let cells: Vec<String> = m.values().iter().map(|v| format!("{v:.6}")).collect();
            writeln!(sink, "{id}\t{}", cells.join("\t"))?;
            Ok(())
        };
        for (q, m) in &self.per_query {
            row(&mut sink, q, m)?;
        }
        row(&mut sink, "all", &self.aggregate)
    }

    /// Column header and percentage row in the usual results-table layout.
    pub fn summary(&self) -> String {
        let cells: Vec<String> = self
            .aggregate
            .values()
            .iter()
            .map(|v| format!("{:.2}", v * 100.0))
            .collect();
        format!(
            "{}\n{}\n",
            COLUMNS.join(" | "),
            cells.join(" | ")
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: u64,
    pub score: f64,
}

/// A parsed TREC run: per query, entries ordered by the rank column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub by_query: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a RunResult>) -> Self {
        let mut by_query = BTreeMap::new();
        for r in results {
            let entries = r
                .hits
                .iter()
                .enumerate()
                .map(|(i, h)| RunEntry {
                    doc_id: h.doc_id.clone(),
                    rank: i as u64 + 1,
                    score: h.score,
                })
                .collect();
            by_query.insert(r.query_id.clone(), entries);
        }
        Self { by_query }
    }

    pub fn ranked(&self, query_id: &str) -> Vec<&str> {
        self.by_query
            .get(query_id)
            .map(|v| v.iter().map(|e| e.doc_id.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn write_trec<W: Write>(&self, mut sink: W, run_tag: &str) -> Result<()> {
        for (q, entries) in &self.by_query {
            for e in entries {
                writeln!(sink, "{q} Q0 {} {} {} {run_tag}", e.doc_id, e.rank, format_score(e.score))?;
            }
        }
        Ok(())
    }
}

/// Parses `qid Q0 docno rank score tag` lines.
pub fn load_run<R: BufRead>(source: R) -> Result<Run> {
    let mut by_query: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() < 6 {
            return Err(Error::malformed(i + 1, format!("expected 6 columns, found {}", cols.len())));
        }
        let rank: u64 = cols[3]
            .parse()
            .map_err(|_| Error::malformed(i + 1, format!("rank `{}` is not an integer", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| Error::malformed(i + 1, format!("score `{}` is not a number", cols[4])))?;
        by_query.entry(cols[0].to_string()).or_default().push(RunEntry {
            doc_id: cols[2].to_string(),
            rank,
            score,
        });
    }
    for entries in by_query.values_mut() {
        entries.sort_by(|a, b| {
            a.rank
                .cmp(&b.rank)
                .then_with(|| b.score.total_cmp(&a.score))
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
    }
    Ok(Run { by_query })
}

/// Evaluates `run` to `depth` against every judged query with at least one
/// relevant document.
pub fn evaluate_run(run: &Run, qrels: &Qrels, depth: usize) -> Result<EvalReport> {
    let mut per_query = BTreeMap::new();
    let mut no_relevant = Vec::new();
    for qid in qrels.query_ids() {
        let relevant = qrels.relevant(qid);
        if relevant.is_empty() {
            no_relevant.push(qid.to_string());
            continue;
        }
        let mut ranked = run.ranked(qid);
        ranked.truncate(depth);
        let metrics = QueryMetrics::compute(&ranked, &relevant).map_err(|e| match e {
            Error::DuplicateInRun { doc_id, .. } => Error::DuplicateInRun {
                query_id: qid.to_string(),
                doc_id,
            },
            other => other,
        })?;
        per_query.insert(qid.to_string(), metrics);
    }
    let unknown_queries: Vec<String> = run
        .by_query
        .keys()
        .filter(|q| !qrels.contains_query(q))
        .cloned()
        .collect();
    for q in &unknown_queries {
        log::warn!("run query `{q}` has no judgments; skipped");
    }
    Ok(EvalReport {
        aggregate: QueryMetrics::mean(per_query.values()),
        num_queries: per_query.len(),
        per_query,
        no_relevant,
        unknown_queries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    pub n: usize,
}

/// Two-sided paired t-test on `a - b`.
///
/// Zero-variance differences give `t = 0, p = 1` when the mean difference is
/// zero and `t = ±∞, p = 0` otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::MismatchedQueries(format!(
            "{} vs {} paired values",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidParameter("t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;

    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        }
    } else {
        let t = mean / (var.sqrt() / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(TTestResult {
        t_statistic: t,
        p_value: p,
        significant: p < SIGNIFICANCE_LEVEL,
        n,
    })
}

/// Paired t-test on per-query values aligned by query id.
pub fn paired_t_test_by_query(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> Result<TTestResult> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        let only_a: Vec<_> = a.keys().filter(|k| !b.contains_key(*k)).collect();
        let only_b: Vec<_> = b.keys().filter(|k| !a.contains_key(*k)).collect();
        return Err(Error::MismatchedQueries(format!(
            "only in first: {only_a:?}; only in second: {only_b:?}"
        )));
    }
    let xs: Vec<f64> = a.values().copied().collect();
    let ys: Vec<f64> = b.values().copied().collect();
    paired_t_test(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rel<'a>(docs: &[&'a str]) -> BTreeSet<&'a str> {
        docs.iter().copied().collect()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&["d2", "d1"], &rel(&["d1"])).unwrap(), 0.5);
        assert_eq!(average_precision(&["b", "a", "x"], &rel(&["a", "b"])).unwrap(), 1.0);
        assert_abs_diff_eq!(
            average_precision(&["d1", "d2", "d3"], &rel(&["d1", "d3"])).unwrap(),
            5.0 / 6.0,
            epsilon = 1e-15
        );
        assert_eq!(average_precision(&[], &rel(&["d1"])).unwrap(), 0.0);
        assert!(average_precision(&["d1", "d1"], &rel(&["d1"])).is_err());
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision_at(&["d1"], &rel(&["d1"]), 5), 0.2);
        assert_eq!(precision_at(&["a", "b"], &rel(&["a", "b"]), 2), 1.0);
        assert_eq!(precision_at(&["d2", "d1"], &rel(&["d1"]), 2), 0.5);
    }

    #[test]
    fn r_precision_examples() {
        assert_eq!(r_precision(&["d1", "d2"], &rel(&["d1"])), 1.0);
        assert_eq!(r_precision(&["d2", "d1"], &rel(&["d1"])), 0.0);
        assert_eq!(r_precision(&["d1", "d3", "d2"], &rel(&["d1", "d2"])), 0.5);
    }

    #[test]
    fn t_test_reference_value() {
        // Reference: scipy.stats.ttest_rel(d, zeros) → t=1.4142135623730951, p=0.23019964108049873
        let a = [0.2, -0.1, 0.3, 0.0, 0.1];
        let r = paired_t_test(&a, &[0.0; 5]).unwrap();
        assert_abs_diff_eq!(r.t_statistic, std::f64::consts::SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_value, 0.23019964108049873, epsilon = 1e-9);
        assert!(!r.significant);
        assert_eq!(r.n, 5);
    }

    #[test]
    fn t_test_degenerate_cases() {
        let same = paired_t_test(&[0.3, 0.4, 0.5], &[0.3, 0.4, 0.5]).unwrap();
        assert_eq!((same.t_statistic, same.p_value, same.significant), (0.0, 1.0, false));
        let shifted = paired_t_test(&[0.1; 4], &[0.0; 4]).unwrap();
        assert!(shifted.t_statistic.is_infinite() && shifted.t_statistic > 0.0);
        assert_eq!(shifted.p_value, 0.0);
        assert!(shifted.significant);
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn t_test_by_query_alignment() {
        let a: BTreeMap<String, f64> = [("1".into(), 0.5), ("2".into(), 0.7)].into();
        let b: BTreeMap<String, f64> = [("1".into(), 0.5), ("3".into(), 0.7)].into();
        assert!(matches!(
            paired_t_test_by_query(&a, &b),
            Err(Error::MismatchedQueries(_))
        ));
        assert_eq!(paired_t_test_by_query(&a, &a).unwrap().p_value, 1.0);
    }

    #[test]
    fn evaluate_single_query() {
        let run = load_run("q1 Q0 d2 1 2.0 t\nq1 Q0 d1 2 1.0 t\n".as_bytes()).unwrap();
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d1", 1).unwrap();
        let r = evaluate_run(&run, &qrels, 1000).unwrap();
        assert_eq!(r.num_queries, 1);
        assert_eq!(r.map(), 0.5);
        assert_eq!(r.aggregate.r_prec, 0.0);
        assert_eq!(r.aggregate.p5, 0.2);
    }

    #[test]
    fn empty_run_scores_zero_on_judged_queries() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d1", 1).unwrap();
        qrels.insert("q2", "d9", 0).unwrap();
        let r = evaluate_run(&Run::default(), &qrels, 1000).unwrap();
        assert_eq!(r.num_queries, 1);
        assert_eq!(r.aggregate, QueryMetrics::default());
        assert_eq!(r.no_relevant, ["q2"]);
    }

    #[test]
    fn map_averages_queries() {
        let run = load_run("a Q0 x 1 1 t\nb Q0 y 1 1 t\nb Q0 x 2 0.5 t\n".as_bytes()).unwrap();
        let mut qrels = Qrels::new();
        qrels.insert("a", "x", 1).unwrap();
        qrels.insert("b", "x", 1).unwrap();
        let r = evaluate_run(&run, &qrels, 1000).unwrap();
        assert_eq!(r.per_query["a"].ap, 1.0);
        assert_eq!(r.per_query["b"].ap, 0.5);
        assert_eq!(r.map(), 0.75);
    }

    #[test]
    fn rank_column_orders_entries_and_depth_truncates() {
        // lines out of order; the rank column decides
        let run = load_run("q Q0 b 2 9.0 t\nq Q0 a 1 1.0 t\n".as_bytes()).unwrap();
        assert_eq!(run.ranked("q"), ["a", "b"]);
        let mut qrels = Qrels::new();
        qrels.insert("q", "b", 1).unwrap();
        assert_eq!(evaluate_run(&run, &qrels, 1).unwrap().map(), 0.0);
        assert_eq!(evaluate_run(&run, &qrels, 2).unwrap().map(), 0.5);
    }

    #[test]
    fn unknown_and_duplicate_queries() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "a", 1).unwrap();
        let run = load_run("zz Q0 a 1 1 t\n".as_bytes()).unwrap();
        assert_eq!(evaluate_run(&run, &qrels, 10).unwrap().unknown_queries, ["zz"]);
        let dup = load_run("q Q0 a 1 1 t\nq Q0 a 2 1 t\n".as_bytes()).unwrap();
        assert!(matches!(
            evaluate_run(&dup, &qrels, 10),
            Err(Error::DuplicateInRun { ref query_id, .. }) if query_id == "q"
        ));
    }

    #[test]
    fn malformed_run_lines() {
        assert!(matches!(load_run("q Q0 a 1 1\n".as_bytes()), Err(Error::Malformed { offset: 1, .. })));
        assert!(load_run("q Q0 a x 1 t\n".as_bytes()).is_err());
        assert!(load_run("q Q0 a 1 y t\n".as_bytes()).is_err());
    }

    #[test]
    fn report_outputs() {
        let run = load_run("q1 Q0 d2 1 2.0 t\nq1 Q0 d1 2 1.0 t\n".as_bytes()).unwrap();
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d1", 1).unwrap();
        let r = evaluate_run(&run, &qrels, 1000).unwrap();
        let mut tsv = Vec::new();
        r.write_tsv(&mut tsv).unwrap();
        let tsv = String::from_utf8(tsv).unwrap();
        let lines: Vec<_> = tsv.lines().collect();
        assert_eq!(lines[0], "query_id\tMAP\tR-Prec\tP@5\tP@10\tP@20\tP@100");
        assert_eq!(lines[1], "q1\t0.500000\t0.000000\t0.200000\t0.100000\t0.050000\t0.010000");
        assert!(lines[2].starts_with("all\t0.500000"));
        assert!(r.summary().starts_with("MAP | R-Prec | P@5"));
        assert!(r.summary().contains("50.00 | 0.00 | 20.00"));
    }
}
