//! Seeded synthetic test collection.
//!
//! Topics are grouped into domains. A relevant document mixes three sources:
//! its topic's own vocabulary, its domain's shared vocabulary, and a Zipfian
//! background. Each domain also has off-topic documents written from the
//! domain vocabulary alone, and plain background documents carry light noise
//! from random topics and domains. All vocabularies are Zipf distributed.
//!
//! A title pairs one domain term with one topic term, so part of the
//! relevant set misses each query word and the domain word also pulls in
//! same-domain non-relevant documents. Per-topic training texts come from a
//! blurrier mixture (more domain, some sibling-topic vocabulary) and stand in
//! for what a general language model knows about the topic.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Qrels, Topic};
use crate::error::{Error, Result};

/// Generated text length used by the trend study. Short enough that expanded
/// query counts stay under the BM25+ `k3` knee at 100 texts.
pub const STUDY_TEXT_LENGTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub num_domains: usize,
    pub topics_per_domain: usize,
    pub relevant_per_topic: usize,
    /// Off-topic documents per domain.
    pub domain_docs: usize,
    pub background_docs: usize,
    pub background_vocab: usize,
    pub domain_vocab: usize,
    pub topic_vocab: usize,
    /// Rank (0-based) of the title's domain term.
    pub title_domain_rank: usize,
    /// Rank (0-based) of the title's topic term.
    pub title_topic_rank: usize,
    pub min_doc_len: usize,
    pub max_doc_len: usize,
    /// Token shares (topic, domain) in relevant documents.
    pub relevant_mix: (f64, f64),
    /// Domain share in off-topic domain documents.
    pub domain_doc_share: f64,
    /// Token shares (random topic, random domain) in background documents.
    pub noise_mix: (f64, f64),
    /// Token shares (topic, domain) in training texts.
    pub training_mix: (f64, f64),
    /// Token share in training texts drawn from sibling topics of the domain.
    pub sibling_share: f64,
    pub training_texts: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 2021,
            num_domains: 10,
            topics_per_domain: 5,
            relevant_per_topic: 20,
            domain_docs: 50,
            background_docs: 500,
            background_vocab: 3000,
            domain_vocab: 24,
            topic_vocab: 12,
            title_domain_rank: 10,
            title_topic_rank: 1,
            min_doc_len: 80,
            max_doc_len: 240,
            relevant_mix: (0.08, 0.08),
            domain_doc_share: 0.16,
            noise_mix: (0.02, 0.02),
            training_mix: (0.08, 0.1),
            sibling_share: 0.1,
            training_texts: 40,
        }
    }
}

impl SyntheticConfig {
    pub fn num_topics(&self) -> usize {
        self.num_domains * self.topics_per_domain
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDoc {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingText {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub documents: Vec<SyntheticDoc>,
    pub topics: Vec<Topic>,
    pub qrels: Qrels,
    pub training: Vec<TrainingText>,
}

struct Vocabulary {
    terms: Vec<String>,
    weights: WeightedIndex<f64>,
}

impl Vocabulary {
    fn zipf(terms: Vec<String>) -> Self {
        let weights = WeightedIndex::new((1..=terms.len()).map(|r| 1.0 / r as f64)).unwrap();
        Self { terms, weights }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> &str {
        &self.terms[self.weights.sample(rng)]
    }
}

/// Where each token of a document comes from.
#[derive(Clone, Copy)]
enum Source {
    Topic(usize),
    Domain(usize),
    AnyTopic,
    AnyDomain,
    /// Any topic of the domain other than the given one.
    Sibling(usize),
}

impl SyntheticCollection {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        let (rt, rd) = cfg.relevant_mix;
        let (nt, nd) = cfg.noise_mix;
        let (tt, td) = cfg.training_mix;
        if cfg.num_topics() == 0
            || cfg.domain_vocab <= cfg.title_domain_rank
            || cfg.topic_vocab <= cfg.title_topic_rank
            || cfg.background_vocab == 0
            || cfg.min_doc_len == 0
            || cfg.min_doc_len > cfg.max_doc_len
            || [rt, rd, nt, nd, tt, td, cfg.domain_doc_share]
                .iter()
                .any(|x| !(0.0..=1.0).contains(x))
            || rt + rd > 1.0
            || nt + nd > 1.0
            || !(0.0..=1.0).contains(&cfg.sibling_share)
            || tt + td + cfg.sibling_share > 1.0
        {
            return Err(Error::InvalidParameter("inconsistent synthetic config".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let background = Vocabulary::zipf((0..cfg.background_vocab).map(|i| format!("w{i:04}")).collect());
        let domains: Vec<Vocabulary> = (0..cfg.num_domains)
            .map(|d| Vocabulary::zipf((0..cfg.domain_vocab).map(|j| format!("d{d:02}v{j:02}")).collect()))
            .collect();
        let topic_vocab: Vec<Vocabulary> = (0..cfg.num_topics())
            .map(|t| Vocabulary::zipf((0..cfg.topic_vocab).map(|j| format!("t{t:02}v{j:02}")).collect()))
            .collect();
        let domain_of = |t: usize| t / cfg.topics_per_domain;
        let topics: Vec<Topic> = (0..cfg.num_topics())
            .map(|t| {
                Topic::new(
                    format!("{}", 101 + t),
                    format!(
                        "{} {}",
                        domains[domain_of(t)].terms[cfg.title_domain_rank],
                        topic_vocab[t].terms[cfg.title_topic_rank]
                    ),
                )
            })
            .collect();

        let draw_doc = |rng: &mut ChaCha8Rng, mix: &[(Source, f64)]| -> String {
            let len = rng.random_range(cfg.min_doc_len..=cfg.max_doc_len);
            let mut tokens = Vec::with_capacity(len);
            for _ in 0..len {
                let mut u: f64 = rng.random();
                let mut source = None;
                for &(s, share) in mix {
                    if u < share {
                        source = Some(s);
                        break;
                    }
                    u -= share;
                }
                let term = match source {
                    Some(Source::Topic(t)) => topic_vocab[t].draw(rng),
                    Some(Source::Domain(d)) => domains[d].draw(rng),
                    Some(Source::AnyTopic) => {
                        let t = rng.random_range(0..topic_vocab.len());
                        topic_vocab[t].draw(rng)
                    }
                    Some(Source::AnyDomain) => {
                        let d = rng.random_range(0..domains.len());
                        domains[d].draw(rng)
                    }
                    Some(Source::Sibling(t)) if cfg.topics_per_domain > 1 => {
                        let first = domain_of(t) * cfg.topics_per_domain;
                        let mut s = first + rng.random_range(0..cfg.topics_per_domain - 1);
                        if s >= t {
                            s += 1;
                        }
                        topic_vocab[s].draw(rng)
                    }
                    Some(Source::Sibling(t)) => topic_vocab[t].draw(rng),
                    None => background.draw(rng),
                };
                tokens.push(term);
            }
            tokens.join(" ")
        };

        let mut documents: Vec<(String, Option<usize>)> = Vec::new();
        for t in 0..cfg.num_topics() {
            let mix = [(Source::Topic(t), rt), (Source::Domain(domain_of(t)), rd)];
            for _ in 0..cfg.relevant_per_topic {
                documents.push((draw_doc(&mut rng, &mix), Some(t)));
            }
        }
        for d in 0..cfg.num_domains {
            for _ in 0..cfg.domain_docs {
                documents.push((draw_doc(&mut rng, &[(Source::Domain(d), cfg.domain_doc_share)]), None));
            }
        }
        let noise = [(Source::AnyTopic, nt), (Source::AnyDomain, nd)];
        for _ in 0..cfg.background_docs {
            documents.push((draw_doc(&mut rng, &noise), None));
        }
        // shuffle so document ids carry no topic information
        for i in (1..documents.len()).rev() {
            let j = rng.random_range(0..=i);
            documents.swap(i, j);
        }
        let mut qrels = Qrels::new();
        let documents: Vec<SyntheticDoc> = documents
            .into_iter()
            .enumerate()
            .map(|(i, (text, topic))| {
                let doc_id = format!("SYN{i:05}");
                if let Some(t) = topic {
                    qrels
                        .insert(topics[t].query_id.clone(), doc_id.clone(), 1)
                        .expect("fresh judgment");
                }
                SyntheticDoc { doc_id, text }
            })
            .collect();

        let mut training = Vec::new();
        for (t, topic) in topics.iter().enumerate() {
            let mix = [
                (Source::Topic(t), tt),
                (Source::Domain(domain_of(t)), td),
                (Source::Sibling(t), cfg.sibling_share),
            ];
            for _ in 0..cfg.training_texts {
                training.push(TrainingText {
                    query_id: topic.query_id.clone(),
                    text: draw_doc(&mut rng, &mix),
                });
            }
        }

        Ok(Self {
            documents,
            topics,
            qrels,
            training,
        })
    }

    /// Training texts grouped by query id.
    pub fn training_by_topic(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for t in &self.training {
            out.entry(t.query_id.as_str()).or_default().push(t.text.as_str());
        }
        out
    }

    /// Writes `docs.jsonl`, `topics.jsonl`, `qrels.txt` and `train.jsonl`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(Error::at(dir))?;
        write_jsonl(&dir.join("docs.jsonl"), &self.documents)?;
        write_jsonl(&dir.join("topics.jsonl"), &self.topics)?;
        write_jsonl(&dir.join("train.jsonl"), &self.training)?;
        let path = dir.join("qrels.txt");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(Error::at(&path))?);
        self.qrels.write(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(Error::at(path))?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads `{query_id, text}` lines.
pub fn read_training<R: std::io::BufRead>(source: R) -> Result<Vec<TrainingText>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::malformed(i + 1, e.to_string()))?);
    }
    Ok(out)
}
