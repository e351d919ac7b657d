//! Text generation from a query seed.
//!
//! A [`GeneratorBackend`] turns a seed into `n_texts` texts. Three backends
//! are provided: [`StubBackend`] samples from an n-gram model fitted on a
//! collection (deterministic under a seed, used for tests and synthetic
//! studies), [`CacheBackend`] replays texts stored on disk, and
//! [`HttpBackend`] calls a generation sidecar.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Tokenizer, Topic};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub n_texts: usize,
    /// Maximum length of each text, in tokens.
    pub length: usize,
    pub temperature: f64,
    pub top_p: f64,
    /// 0 disables top-k truncation.
    pub top_k: usize,
    pub rng_seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            n_texts: 100,
            length: 512,
            temperature: 0.5,
            top_p: 0.95,
            top_k: 40,
            rng_seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidParameter("temperature must be > 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidParameter("top_p must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSet {
    pub query_id: String,
    pub seed_text: String,
    pub texts: Vec<String>,
    pub backend_tag: String,
    pub params: GenerationParams,
}

pub trait GeneratorBackend: Send + Sync {
    fn tag(&self) -> String;

    /// Produces `params.n_texts` texts for `seed`. `query_id` lets keyed
    /// backends (caches, per-topic models) find their data; others ignore it.
    fn generate(&self, query_id: &str, seed: &str, params: &GenerationParams)
        -> Result<Vec<String>>;
}

/// Generates the text set for one topic, seeded with its title.
pub fn generate_for_topic(
    backend: &dyn GeneratorBackend,
    topic: &Topic,
    params: &GenerationParams,
) -> Result<GeneratedSet> {
    params.validate()?;
    let texts = if params.n_texts == 0 {
        Vec::new()
    } else {
        backend.generate(&topic.query_id, &topic.title, params)?
    };
    if texts.len() > params.n_texts {
        return Err(Error::Backend {
            produced: texts.len(),
            message: format!("backend returned more than the {} requested texts", params.n_texts),
        });
    }
    if texts.len() < params.n_texts {
        log::warn!(
            "query {}: backend {} produced {} of {} texts",
            topic.query_id,
            backend.tag(),
            texts.len(),
            params.n_texts
        );
    }
    Ok(GeneratedSet {
        query_id: topic.query_id.clone(),
        seed_text: topic.title.clone(),
        texts,
        backend_tag: backend.tag(),
        params: params.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NgramOrder {
    Unigram,
    #[default]
    Bigram,
}

/// Unigram and bigram counts over a token collection.
///
/// Candidate lists are kept sorted by count descending, then by term, so
/// sampling is reproducible for a fixed random stream.
#[derive(Debug, Clone)]
pub struct CorpusModel {
    order: NgramOrder,
    vocab: Vec<String>,
    lookup: HashMap<String, u32>,
    unigram: Vec<(u32, u64)>,
    successors: HashMap<u32, Vec<(u32, u64)>>,
}

impl CorpusModel {
    pub fn fit<I, S>(sequences: I, order: NgramOrder) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        let sequences: Vec<S> = sequences.into_iter().collect();
        let mut vocab: Vec<String> = sequences
            .iter()
            .flat_map(|s| s.as_ref().iter().cloned())
            .collect();
        vocab.sort_unstable();
        vocab.dedup();
        if vocab.is_empty() {
            return Err(Error::InvalidParameter("empty corpus model".into()));
        }
        let lookup: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();

        let mut uni = vec![0u64; vocab.len()];
        let mut bi: HashMap<u32, HashMap<u32, u64>> = HashMap::new();
        for seq in &sequences {
            let ids: Vec<u32> = seq.as_ref().iter().map(|t| lookup[t]).collect();
            for &id in &ids {
                uni[id as usize] += 1;
            }
            for w in ids.windows(2) {
                *bi.entry(w[0]).or_default().entry(w[1]).or_default() += 1;
            }
        }
        let unigram = sorted_candidates(uni.into_iter().enumerate().map(|(i, c)| (i as u32, c)));
        let successors = bi
            .into_iter()
            .map(|(prev, next)| (prev, sorted_candidates(next)))
            .collect();
        Ok(Self {
            order,
            vocab,
            lookup,
            unigram,
            successors,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn order(&self) -> NgramOrder {
        self.order
    }

    /// Next-token candidates after `prev`, most frequent first. Falls back to
    /// unigram counts when `prev` has no observed successor.
    pub fn candidates(&self, prev: Option<&str>) -> Vec<(&str, u64)> {
        let prev = prev.and_then(|p| self.lookup.get(p).copied());
        self.candidate_ids(prev)
            .iter()
            .map(|&(id, c)| (self.vocab[id as usize].as_str(), c))
            .collect()
    }

    fn candidate_ids(&self, prev: Option<u32>) -> &[(u32, u64)] {
        match (self.order, prev) {
            (NgramOrder::Bigram, Some(p)) => self
                .successors
                .get(&p)
                .map_or(self.unigram.as_slice(), Vec::as_slice),
            _ => &self.unigram,
        }
    }

    /// Candidate distribution after temperature, top-k and top-p truncation,
    /// as (token id, probability) in descending order.
    fn truncated(&self, prev: Option<u32>, params: &GenerationParams) -> Vec<(u32, f64)> {
        let cands = self.candidate_ids(prev);
        let k = if params.top_k == 0 {
            cands.len()
        } else {
            params.top_k.min(cands.len())
        };
        let top = (cands[0].1 as f64).ln();
        let mut weighted: Vec<(u32, f64)> = cands[..k]
            .iter()
            .map(|&(id, c)| (id, (((c as f64).ln() - top) / params.temperature).exp()))
            .collect();
        let total: f64 = weighted.iter().map(|(_, w)| w).sum();
        let mut cum = 0.0;
        let mut keep = weighted.len();
        for (i, (_, w)) in weighted.iter_mut().enumerate() {
            *w /= total;
            cum += *w;
            if cum >= params.top_p - 1e-12 {
                keep = i + 1;
                break;
            }
        }
        weighted.truncate(keep);
        let kept: f64 = weighted.iter().map(|(_, w)| w).sum();
        for (_, w) in &mut weighted {
            *w /= kept;
        }
        weighted
    }

    /// Next-token distribution after truncation, by term.
    pub fn next_distribution(&self, prev: Option<&str>, params: &GenerationParams) -> Vec<(&str, f64)> {
        let prev = prev.and_then(|p| self.lookup.get(p).copied());
        self.truncated(prev, params)
            .into_iter()
            .map(|(id, p)| (self.vocab[id as usize].as_str(), p))
            .collect()
    }

    fn sample_next(&self, prev: Option<u32>, params: &GenerationParams, rng: Option<&mut ChaCha8Rng>) -> u32 {
        let Some(rng) = rng else {
            return self.candidate_ids(prev)[0].0;
        };
        let dist = self.truncated(prev, params);
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for &(id, p) in &dist {
            cum += p;
            if u < cum {
                return id;
            }
        }
        dist.last().expect("non-empty distribution").0
    }
}

fn sorted_candidates(counts: impl IntoIterator<Item = (u32, u64)>) -> Vec<(u32, u64)> {
    let mut v: Vec<(u32, u64)> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
    v.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Per-text random stream: ChaCha8 seeded with `seed`, stream number `index`.
pub fn text_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Emits `seed_tokens` followed by tokens sampled from `model`, `params.length`
/// tokens at most per text. With `greedy`, every step takes the most frequent
/// candidate and no randomness is used.
pub fn stub_generate(
    seed_tokens: &[String],
    params: &GenerationParams,
    model: &CorpusModel,
    greedy: bool,
) -> Result<Vec<String>> {
    params.validate()?;
    let base_seed = params.rng_seed.unwrap_or_else(|| rand::rng().random());
    let mut out = Vec::with_capacity(params.n_texts);
    for i in 0..params.n_texts {
        let mut rng = (!greedy).then(|| text_rng(base_seed, i));
        let mut tokens: Vec<&str> = seed_tokens
            .iter()
            .take(params.length)
            .map(String::as_str)
            .collect();
        let mut prev = tokens.last().and_then(|t| model.lookup.get(*t).copied());
        while tokens.len() < params.length {
            let next = model.sample_next(prev, params, rng.as_mut());
            tokens.push(&model.vocab[next as usize]);
            prev = Some(next);
        }
        out.push(tokens.join(" "));
    }
    Ok(out)
}

/// Deterministic n-gram generator. Topics with a dedicated model use it;
/// others fall back to the default model.
pub struct StubBackend {
    default_model: Option<CorpusModel>,
    topic_models: HashMap<String, CorpusModel>,
    tokenizer: Tokenizer,
    greedy: bool,
}

impl StubBackend {
    pub fn new(model: CorpusModel, tokenizer: Tokenizer) -> Self {
        Self {
            default_model: Some(model),
            topic_models: HashMap::new(),
            tokenizer,
            greedy: false,
        }
    }

    /// Backend with per-topic models only.
    pub fn per_topic(models: HashMap<String, CorpusModel>, tokenizer: Tokenizer) -> Self {
        Self {
            default_model: None,
            topic_models: models,
            tokenizer,
            greedy: false,
        }
    }

    pub fn with_topic_model(mut self, query_id: impl Into<String>, model: CorpusModel) -> Self {
        self.topic_models.insert(query_id.into(), model);
        self
    }

    pub fn greedy(mut self, greedy: bool) -> Self {
        self.greedy = greedy;
        self
    }
}

impl GeneratorBackend for StubBackend {
    fn tag(&self) -> String {
        if self.greedy {
            "stub-greedy".into()
        } else {
            "stub".into()
        }
    }

    fn generate(&self, query_id: &str, seed: &str, params: &GenerationParams) -> Result<Vec<String>> {
        let model = self
            .topic_models
            .get(query_id)
            .or(self.default_model.as_ref())
            .ok_or_else(|| Error::Backend {
                produced: 0,
                message: format!("no stub model for query `{query_id}`"),
            })?;
        stub_generate(&self.tokenizer.tokenize(seed), params, model, self.greedy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheMeta {
    query_id: String,
    seed_text: String,
    backend_tag: String,
    params: GenerationParams,
    n_stored: usize,
}

const META_FILE: &str = "meta.json";

fn query_dir(root: &Path, query_id: &str) -> Result<PathBuf> {
    if query_id.is_empty()
        || query_id.starts_with('.')
        || query_id.contains(['/', '\\'])
    {
        return Err(Error::InvalidParameter(format!(
            "query id `{query_id}` is not usable as a cache directory name"
        )));
    }
    Ok(root.join(query_id))
}

/// Writes `set` under `<root>/<query_id>/`, replacing any previous entry.
/// The directory is assembled under a temporary name and renamed into place.
pub fn cache_store(set: &GeneratedSet, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    let dest = query_dir(root, &set.query_id)?;
    fs::create_dir_all(root).map_err(Error::at(root))?;
    let tmp = root.join(format!(".tmp-{}-{}", set.query_id, std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(Error::at(&tmp))?;
    }
    fs::create_dir(&tmp).map_err(Error::at(&tmp))?;

    let width = set.texts.len().saturating_sub(1).to_string().len().max(3);
    for (i, text) in set.texts.iter().enumerate() {
        let path = tmp.join(format!("{i:0width$}.txt"));
        fs::write(&path, text).map_err(Error::at(&path))?;
    }
    let meta = CacheMeta {
        query_id: set.query_id.clone(),
        seed_text: set.seed_text.clone(),
        backend_tag: set.backend_tag.clone(),
        params: set.params.clone(),
        n_stored: set.texts.len(),
    };
    let meta_path = tmp.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(Error::at(&meta_path))?;

    if dest.exists() {
        fs::remove_dir_all(&dest).map_err(Error::at(&dest))?;
    }
    fs::rename(&tmp, &dest).map_err(Error::at(&dest))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheLoad {
    pub set: GeneratedSet,
    /// Differences between the stored and the requested parameters.
    pub mismatches: Vec<String>,
}

/// Reads `<root>/<query_id>/`. Texts are the `*.txt` files in name order.
/// When `expected` is given, parameter differences are logged and returned,
/// but the stored set is still returned.
pub fn cache_load(
    query_id: &str,
    root: impl AsRef<Path>,
    expected: Option<&GenerationParams>,
) -> Result<CacheLoad> {
    let dir = query_dir(root.as_ref(), query_id)?;
    if !dir.is_dir() {
        return Err(Error::NotFound(format!(
            "no cache entry for query `{query_id}` at {}",
            dir.display()
        )));
    }
    let meta_path = dir.join(META_FILE);
    let raw = fs::read_to_string(&meta_path).map_err(Error::at(&meta_path))?;
    let meta: CacheMeta = serde_json::from_str(&raw)?;

    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(Error::at(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    let texts = files
        .iter()
        .map(|p| fs::read_to_string(p).map_err(Error::at(p)))
        .collect::<Result<Vec<_>>>()?;

    let mut mismatches = Vec::new();
    if meta.query_id != query_id {
        mismatches.push(format!("stored query_id `{}`", meta.query_id));
    }
    if texts.len() != meta.n_stored {
        mismatches.push(format!(
            "metadata lists {} texts, directory holds {}",
            meta.n_stored,
            texts.len()
        ));
    }
    if let Some(want) = expected {
        let have = &meta.params;
        let mut diff = |name: &str, a: String, b: String| {
            if a != b {
                mismatches.push(format!("{name}: stored {a}, requested {b}"));
            }
        };
        diff("n_texts", have.n_texts.to_string(), want.n_texts.to_string());
        diff("length", have.length.to_string(), want.length.to_string());
        diff("temperature", have.temperature.to_string(), want.temperature.to_string());
        diff("top_p", have.top_p.to_string(), want.top_p.to_string());
        diff("top_k", have.top_k.to_string(), want.top_k.to_string());
        diff("rng_seed", format!("{:?}", have.rng_seed), format!("{:?}", want.rng_seed));
    }
    for m in &mismatches {
        log::warn!("cache entry {query_id}: {m}");
    }
    Ok(CacheLoad {
        set: GeneratedSet {
            query_id: query_id.to_string(),
            seed_text: meta.seed_text,
            texts,
            backend_tag: meta.backend_tag,
            params: meta.params,
        },
        mismatches,
    })
}

/// Replays cached texts; returns the first `n_texts` stored texts.
pub struct CacheBackend {
    root: PathBuf,
}

impl CacheBackend {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl GeneratorBackend for CacheBackend {
    fn tag(&self) -> String {
        "cache".into()
    }

    fn generate(&self, query_id: &str, _seed: &str, params: &GenerationParams) -> Result<Vec<String>> {
        let mut loaded = cache_load(query_id, &self.root, None)?.set.texts;
        loaded.truncate(params.n_texts);
        Ok(loaded)
    }
}

/// Body of `POST /generate` on the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub seed: String,
    pub n: usize,
    pub length: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub rng_seed: Option<u64>,
}

impl GenerateRequest {
    pub fn new(seed: &str, params: &GenerationParams) -> Self {
        Self {
            seed: seed.to_string(),
            n: params.n_texts,
            length: params.length,
            temperature: params.temperature,
            top_p: params.top_p,
            top_k: params.top_k,
            rng_seed: params.rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub texts: Vec<String>,
    pub model_tag: String,
    pub elapsed_ms: u64,
}

/// Client for the generation sidecar.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: String,
    attempts: u32,
    backoff: Duration,
    timeout: Duration,
}

impl HttpBackend {
    /// `endpoint` is the sidecar base URL, e.g. `http://127.0.0.1:8000`.
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            attempts: 3,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(600),
        }
    }

    /// Initial retry delay; doubles after each failed attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn http_generate(&self, seed: &str, params: &GenerationParams) -> Result<GenerateResponse> {
        let request = GenerateRequest::new(seed, params);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let url = format!("{}/generate", self.endpoint);

        let mut delay = self.backoff;
        let mut last_error = String::new();
        for attempt in 1..=self.attempts {
            if attempt > 1 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            let mut response = match agent.post(&url).send_json(&request) {
                Ok(r) => r,
                Err(e) => {
                    last_error = format!("attempt {attempt}: {e}");
                    log::warn!("generation request to {url} failed ({last_error})");
                    continue;
                }
            };
            let status = response.status().as_u16();
            if status == 429 || status >= 500 {
                last_error = format!("attempt {attempt}: HTTP {status}");
                log::warn!("generation request to {url} failed ({last_error})");
                continue;
            }
            if status != 200 {
                let body = response.body_mut().read_to_string().unwrap_or_default();
                return Err(Error::Backend {
                    produced: 0,
                    message: format!("HTTP {status}: {body}"),
                });
            }
            let body: GenerateResponse =
                response.body_mut().read_json().map_err(|e| Error::Backend {
                    produced: 0,
                    message: format!("non-conforming response: {e}"),
                })?;
            if body.texts.len() != request.n {
                return Err(Error::Backend {
                    produced: body.texts.len(),
                    message: format!(
                        "requested {} texts, sidecar returned {}",
                        request.n,
                        body.texts.len()
                    ),
                });
            }
            return Ok(body);
        }
        Err(Error::Backend {
            produced: 0,
            message: format!("gave up after {} attempts, last: {last_error}", self.attempts),
        })
    }
}

impl GeneratorBackend for HttpBackend {
    fn tag(&self) -> String {
        format!("http:{}", self.endpoint)
    }

    fn generate(&self, _query_id: &str, seed: &str, params: &GenerationParams) -> Result<Vec<String>> {
        Ok(self.http_generate(seed, params)?.texts)
    }
}
