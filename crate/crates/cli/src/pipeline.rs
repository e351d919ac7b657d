//! Experiment steps shared by the commands and the test suites.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qgen_core::corpus::{load_documents, load_qrels, load_topics};
use qgen_core::eval::{evaluate_run, Run};
use qgen_core::expansion::{build_expanded_query, ExpansionConfig, ExpansionMode, KWeighting};
use qgen_core::generation::{
    cache_load, cache_store, generate_for_topic, CorpusModel, GeneratedSet, GeneratorBackend,
    HttpBackend, StubBackend,
};
use qgen_core::ranking::{score_all, DirichletParams, QueryOrigin, RunResult, ScoringModel};
use qgen_core::rm3::rm3_expand;
use qgen_core::synthetic::read_training;
use qgen_core::{Document, InvertedIndex, Qrels, Tokenizer, Topic, WeightedQuery};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Backend, ExperimentConfig};
use crate::UsageError;

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn tokenizer(cfg: &ExperimentConfig) -> Result<Tokenizer> {
    Ok(Tokenizer::new(cfg.tokenization.clone())?)
}

pub fn load_corpus(cfg: &ExperimentConfig, tok: &Tokenizer) -> Result<Vec<Document>> {
    let path = &cfg.paths.corpus;
    load_documents(open(path)?, cfg.paths.corpus_format, tok)
        .with_context(|| format!("reading corpus {}", path.display()))
}

pub fn load_topic_file(cfg: &ExperimentConfig) -> Result<Vec<Topic>> {
    let path = &cfg.paths.topics;
    load_topics(open(path)?, cfg.paths.topics_format)
        .with_context(|| format!("reading topics {}", path.display()))
}

pub fn load_qrels_file(path: &Path) -> Result<Qrels> {
    load_qrels(open(path)?).with_context(|| format!("reading qrels {}", path.display()))
}

pub fn build_index(cfg: &ExperimentConfig) -> Result<InvertedIndex> {
    let tok = tokenizer(cfg)?;
    let docs = load_corpus(cfg, &tok)?;
    let index = InvertedIndex::build(&docs, tok.config())?;
    if let Some(dir) = cfg.paths.index.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    index.save(&cfg.paths.index)?;
    Ok(index)
}

pub fn open_index(cfg: &ExperimentConfig) -> Result<InvertedIndex> {
    let index = InvertedIndex::load(&cfg.paths.index)
        .with_context(|| format!("loading index {} (run `qgen index` first)", cfg.paths.index.display()))?;
    index.ensure_compatible(&cfg.tokenization)?;
    Ok(index)
}

pub fn make_backend(cfg: &ExperimentConfig, tok: &Tokenizer) -> Result<Box<dyn GeneratorBackend>> {
    let backend = cfg
        .backend
        .as_ref()
        .ok_or_else(|| UsageError("a `backend` section is required".into()))?;
    Ok(match backend {
        Backend::Http { endpoint, .. } => Box::new(HttpBackend::new(endpoint.clone())),
        Backend::Cache => Box::new(qgen_core::generation::CacheBackend::new(
            cfg.paths.cache.clone().expect("validated"),
        )),
        Backend::Stub { train, order, greedy } => {
            let stub = match train {
                Some(path) => {
                    let texts = read_training(open(path)?)
                        .with_context(|| format!("reading training texts {}", path.display()))?;
                    let mut grouped: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
                    for t in texts {
                        grouped.entry(t.query_id).or_default().push(tok.tokenize(&t.text));
                    }
                    let mut models = HashMap::new();
                    for (q, seqs) in grouped {
                        models.insert(q, CorpusModel::fit(seqs, *order)?);
                    }
                    StubBackend::per_topic(models, Tokenizer::new(tok.config().clone())?)
                }
                None => {
                    let docs = load_corpus(cfg, tok)?;
                    let model = CorpusModel::fit(docs.into_iter().map(|d| d.tokens), *order)?;
                    StubBackend::new(model, Tokenizer::new(tok.config().clone())?)
                }
            };
            Box::new(stub.greedy(*greedy))
        }
    })
}

fn worker_pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(Backend::Http { max_in_flight, .. }) = cfg.backend {
        builder = builder.num_threads(max_in_flight);
    }
    Ok(builder.build()?)
}

/// Outcome of generating for every topic; failures do not stop the others.
pub struct Generation {
    pub sets: BTreeMap<String, GeneratedSet>,
    pub failures: Vec<(String, anyhow::Error)>,
}

pub fn generate_sets(
    cfg: &ExperimentConfig,
    backend: &dyn GeneratorBackend,
    topics: &[Topic],
) -> Result<Generation> {
    let results: Vec<(String, Result<GeneratedSet>)> = worker_pool(cfg)?.install(|| {
        topics
            .par_iter()
            .map(|t| {
                let r = generate_for_topic(backend, t, &cfg.generation)
                    .with_context(|| format!("generating for query {}", t.query_id));
                (t.query_id.clone(), r)
            })
            .collect()
    });
    let mut out = Generation {
        sets: BTreeMap::new(),
        failures: Vec::new(),
    };
    for (q, r) in results {
        match r {
            Ok(set) => {
                out.sets.insert(q, set);
            }
            Err(e) => out.failures.push((q, e)),
        }
    }
    Ok(out)
}

/// Generates and stores every topic's texts in the cache. Failed topics are
/// reported after the successful ones have been written.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<usize> {
    let cache = cfg
        .paths
        .cache
        .as_ref()
        .ok_or_else(|| UsageError("`paths.cache` is required for `generate`".into()))?;
    if matches!(cfg.backend, Some(Backend::Cache)) {
        bail!(UsageError("`generate` needs a stub or http backend, not cache".into()));
    }
    let tok = tokenizer(cfg)?;
    let backend = make_backend(cfg, &tok)?;
    let topics = load_topic_file(cfg)?;
    let generation = generate_sets(cfg, backend.as_ref(), &topics)?;
    for set in generation.sets.values() {
        cache_store(set, cache)?;
    }
    if let Some((q, e)) = generation.failures.into_iter().next() {
        return Err(e.context(format!("generation failed (first failing query: {q})")));
    }
    Ok(generation.sets.len())
}

/// Texts for every topic: replayed from the cache for the cache backend,
/// generated otherwise.
pub fn obtain_sets(
    cfg: &ExperimentConfig,
    tok: &Tokenizer,
    topics: &[Topic],
) -> Result<BTreeMap<String, GeneratedSet>> {
    if let Some(Backend::Cache) = cfg.backend {
        let root = cfg.paths.cache.as_ref().expect("validated");
        let missing: Vec<&str> = topics
            .iter()
            .filter(|t| cfg.generation.n_texts > 0 && !root.join(&t.query_id).is_dir())
            .map(|t| t.query_id.as_str())
            .collect();
        if !missing.is_empty() {
            bail!(qgen_core::Error::NotFound(format!(
                "cache {} has no entry for queries: {}",
                root.display(),
                missing.join(", ")
            )));
        }
        let mut sets = BTreeMap::new();
        for t in topics {
            let mut set = if cfg.generation.n_texts == 0 {
                GeneratedSet {
                    query_id: t.query_id.clone(),
                    seed_text: t.title.clone(),
                    texts: Vec::new(),
                    backend_tag: "cache".into(),
                    params: cfg.generation.clone(),
                }
            } else {
                cache_load(&t.query_id, root, Some(&cfg.generation))?.set
            };
            set.texts.truncate(cfg.generation.n_texts);
            set.seed_text = t.title.clone();
            sets.insert(t.query_id.clone(), set);
        }
        return Ok(sets);
    }
    let backend = make_backend(cfg, tok)?;
    let generation = generate_sets(cfg, backend.as_ref(), topics)?;
    if let Some((_, e)) = generation.failures.into_iter().next() {
        return Err(e);
    }
    Ok(generation.sets)
}

fn lm_params(model: &ScoringModel) -> DirichletParams {
    match model {
        ScoringModel::LmDirichlet(p) => *p,
        ScoringModel::Bm25Plus(_) => DirichletParams::default(),
    }
}

pub fn original_query(topic: &Topic, tok: &Tokenizer) -> WeightedQuery {
    WeightedQuery::from_tokens(tok.tokenize(&topic.title))
}

/// The query actually scored for each topic under `cfg`.
pub fn build_queries(
    cfg: &ExperimentConfig,
    index: &InvertedIndex,
    tok: &Tokenizer,
    topics: &[Topic],
    sets: Option<&BTreeMap<String, GeneratedSet>>,
) -> Result<BTreeMap<String, WeightedQuery>> {
    let lm = ScoringModel::LmDirichlet(lm_params(&cfg.model));
    topics
        .par_iter()
        .map(|t| {
            let original = original_query(t, tok);
            let q = if let Some(expansion) = &cfg.expansion {
                let set = sets
                    .and_then(|s| s.get(&t.query_id))
                    .with_context(|| format!("no generated texts for query {}", t.query_id))?;
                build_expanded_query(t, set, expansion, tok)?
            } else if let Some(rm3) = &cfg.rm3 {
                let first = score_all(index, &original, &lm, rm3.fb_docs);
                rm3_expand(index, &original, &first, rm3, &lm_params(&cfg.model))?.query
            } else {
                original
            };
            Ok((t.query_id.clone(), q))
        })
        .collect()
}

pub fn retrieve(
    index: &InvertedIndex,
    queries: &BTreeMap<String, WeightedQuery>,
    model: &ScoringModel,
    depth: usize,
    run_tag: &str,
) -> Vec<RunResult> {
    queries
        .par_iter()
        .map(|(q, wq)| RunResult::new(q.clone(), score_all(index, wq, model, depth), run_tag))
        .collect()
}

pub fn write_run(path: &Path, results: &[RunResult]) -> Result<()> {
    let mut out = create(path)?;
    for r in results {
        r.write_trec(&mut out)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct QueryRecord {
    origin: QueryOrigin,
    terms: usize,
    texts: Option<usize>,
    hits: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a ExperimentConfig,
    index_fingerprint: &'a str,
    num_docs: usize,
    backend_tag: Option<String>,
    queries: BTreeMap<&'a str, QueryRecord>,
}

pub fn manifest_path(run: &Path) -> PathBuf {
    let mut name = run.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    run.with_file_name(name)
}

pub struct RunOutcome {
    pub results: Vec<RunResult>,
    pub run_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Retrieval for every topic, written as a TREC run plus a manifest.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let tok = tokenizer(cfg)?;
    let index = open_index(cfg)?;
    let topics = load_topic_file(cfg)?;
    let sets = match cfg.expansion {
        Some(_) => Some(obtain_sets(cfg, &tok, &topics)?),
        None => None,
    };
    let queries = build_queries(cfg, &index, &tok, &topics, sets.as_ref())?;
    let results = retrieve(&index, &queries, &cfg.model, cfg.depth, &cfg.run_tag);
    write_run(&cfg.paths.output, &results)?;

    let hits: BTreeMap<&str, usize> = results.iter().map(|r| (r.query_id.as_str(), r.hits.len())).collect();
    let manifest = Manifest {
        tool: "qgen",
        version: env!("CARGO_PKG_VERSION"),
        command: "run",
        config: cfg,
        index_fingerprint: index.fingerprint(),
        num_docs: index.num_docs(),
        backend_tag: sets
            .as_ref()
            .and_then(|s| s.values().next().map(|g| g.backend_tag.clone())),
        queries: queries
            .iter()
            .map(|(q, wq)| {
                let rec = QueryRecord {
                    origin: wq.origin(),
                    terms: wq.len(),
                    texts: sets.as_ref().and_then(|s| s.get(q)).map(|g| g.texts.len()),
                    hits: hits.get(q.as_str()).copied().unwrap_or(0),
                };
                (q.as_str(), rec)
            })
            .collect(),
    };
    let manifest_path = manifest_path(&cfg.paths.output);
    let mut out = create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(RunOutcome {
        results,
        run_path: cfg.paths.output.clone(),
        manifest_path,
    })
}

pub fn map_of(results: &[RunResult], qrels: &Qrels, depth: usize) -> Result<f64> {
    Ok(evaluate_run(&Run::from_results(results), qrels, depth)?.map())
}

/// Everything needed to score many query variants over the same topics.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub tok: Tokenizer,
    pub index: InvertedIndex,
    pub topics: Vec<Topic>,
    pub qrels: Qrels,
    pub sets: BTreeMap<String, GeneratedSet>,
}

impl Experiment {
    pub fn open(cfg: &ExperimentConfig) -> Result<Self> {
        let tok = tokenizer(cfg)?;
        let index = open_index(cfg)?;
        let topics = load_topic_file(cfg)?;
        let qrels = load_qrels_file(cfg.qrels_path()?)?;
        let sets = obtain_sets(cfg, &tok, &topics)?;
        Ok(Self {
            cfg: cfg.clone(),
            tok,
            index,
            topics,
            qrels,
            sets,
        })
    }

    /// MAP of the queries produced by `make` for every topic.
    pub fn map_with<F>(&self, make: F) -> Result<f64>
    where
        F: Fn(&Topic, &GeneratedSet) -> Result<WeightedQuery> + Sync,
    {
        let queries: BTreeMap<String, WeightedQuery> = self
            .topics
            .par_iter()
            .map(|t| Ok((t.query_id.clone(), make(t, &self.sets[&t.query_id])?)))
            .collect::<Result<_>>()?;
        let results = retrieve(&self.index, &queries, &self.cfg.model, self.cfg.depth, &self.cfg.run_tag);
        map_of(&results, &self.qrels, self.cfg.depth)
    }

    pub fn baseline_map(&self) -> Result<f64> {
        self.map_with(|t, _| Ok(original_query(t, &self.tok)))
    }

    pub fn expansion_map(&self, expansion: &ExpansionConfig) -> Result<f64> {
        self.map_with(|t, s| Ok(build_expanded_query(t, s, expansion, &self.tok)?))
    }

    fn expansion_template(&self) -> ExpansionConfig {
        self.cfg.expansion.unwrap_or_default()
    }

    pub fn sweep_k(&self, k_values: &[usize]) -> Result<Vec<SweepKRow>> {
        let base = self.expansion_template();
        let mut rows = Vec::new();
        for &k in k_values {
            for weighting in [KWeighting::Frequency, KWeighting::Fixed] {
                let mode = match weighting {
                    KWeighting::Frequency => ExpansionMode::TopKFrequency { k },
                    KWeighting::Fixed => ExpansionMode::TopKFixed { k },
                };
                let map = self.expansion_map(&ExpansionConfig { mode, ..base })?;
                rows.push(SweepKRow { k: Some(k), mode: weighting_name(weighting), map });
            }
        }
        let map = self.expansion_map(&ExpansionConfig { mode: ExpansionMode::Full, ..base })?;
        rows.push(SweepKRow { k: None, mode: "full", map });
        Ok(rows)
    }

    /// Mean and sample standard deviation of MAP over `repeats` seeded
    /// subsamples of `n` stored texts per topic.
    pub fn sweep_ndocs(&self, n_values: &[usize], repeats: usize, seed: u64) -> Result<Vec<SweepNRow>> {
        if repeats == 0 {
            bail!(UsageError("`repeats` must be >= 1".into()));
        }
        let available = self.sets.values().map(|s| s.texts.len()).min().unwrap_or(0);
        if let Some(&n) = n_values.iter().find(|&&n| n > available) {
            bail!(UsageError(format!(
                "n={n} exceeds the {available} texts available for some query"
            )));
        }
        let expansion = self.expansion_template();
        let mut rows = Vec::new();
        for &n in n_values {
            let mut maps = Vec::with_capacity(repeats);
            for r in 0..repeats {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64);
                // topics in id order so each repeat draws the same stream
                let picks: BTreeMap<&str, Vec<usize>> = self
                    .sets
                    .iter()
                    .map(|(q, s)| {
                        let mut idx = sample(&mut rng, s.texts.len(), n).into_vec();
                        idx.sort_unstable();
                        (q.as_str(), idx)
                    })
                    .collect();
                let map = self.map_with(|t, s| {
                    let sub = GeneratedSet {
                        texts: picks[t.query_id.as_str()].iter().map(|&i| s.texts[i].clone()).collect(),
                        ..s.clone()
                    };
                    Ok(build_expanded_query(t, &sub, &expansion, &self.tok)?)
                })?;
                maps.push(map);
            }
            let (mean, stdev) = mean_stdev(&maps);
            rows.push(SweepNRow { n, mean_map: mean, stdev });
        }
        Ok(rows)
    }
}

fn weighting_name(w: KWeighting) -> &'static str {
    match w {
        KWeighting::Frequency => "frequency",
        KWeighting::Fixed => "fixed",
    }
}

pub fn mean_stdev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepKRow {
    /// `None` for the full-expansion reference row.
    pub k: Option<usize>,
    pub mode: &'static str,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepNRow {
    pub n: usize,
    pub mean_map: f64,
    pub stdev: f64,
}

pub fn write_sweep_k<W: Write>(mut out: W, rows: &[SweepKRow]) -> Result<()> {
    writeln!(out, "k\tmode\tMAP")?;
    for r in rows {
        let k = r.k.map_or_else(|| "all".to_string(), |k| k.to_string());
        writeln!(out, "{k}\t{}\t{:.6}", r.mode, r.map)?;
    }
    Ok(())
}

pub fn write_sweep_ndocs<W: Write>(mut out: W, rows: &[SweepNRow]) -> Result<()> {
    writeln!(out, "n\tmean_MAP\tstdev")?;
    for r in rows {
        writeln!(out, "{}\t{:.6}\t{:.6}", r.n, r.mean_map, r.stdev)?;
    }
    Ok(())
}

/// Writes one plain-text file per document, for language-model fine-tuning.
pub fn export_text(cfg: &ExperimentConfig, dir: &Path) -> Result<usize> {
    let tok = tokenizer(cfg)?;
    let docs = load_corpus(cfg, &tok)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for d in &docs {
        let name: String = d
            .doc_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
            .collect();
        let path = dir.join(format!("{name}.txt"));
        fs::write(&path, &d.text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(docs.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_stdev_by_hand() {
        let (m, s) = mean_stdev(&[0.2, 0.4]);
        assert!((m - 0.3).abs() < 1e-15);
        assert!((s - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_stdev(&[0.5]), (0.5, 0.0));
    }

    #[test]
    fn manifest_sits_beside_run() {
        assert_eq!(manifest_path(Path::new("/r/run.txt")), Path::new("/r/run.txt.manifest.json"));
    }

    #[test]
    fn sweep_tables() {
        let mut buf = Vec::new();
        write_sweep_k(&mut buf, &[
            SweepKRow { k: Some(5), mode: "fixed", map: 0.25 },
            SweepKRow { k: None, mode: "full", map: 0.5 },
        ])
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k\tmode\tMAP\n5\tfixed\t0.250000\nall\tfull\t0.500000\n");
    }
}
