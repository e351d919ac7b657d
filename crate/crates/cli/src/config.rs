//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use qgen_core::corpus::{DocFormat, TopicFormat};
use qgen_core::generation::NgramOrder;
use qgen_core::ranking::DEFAULT_DEPTH;
use qgen_core::{ExpansionConfig, GenerationParams, Rm3Config, ScoringModel, TokenizationConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    #[serde(default = "default_doc_format")]
    pub corpus_format: DocFormat,
    pub topics: PathBuf,
    #[serde(default = "default_topic_format")]
    pub topics_format: TopicFormat,
    pub qrels: Option<PathBuf>,
    pub index: PathBuf,
    pub cache: Option<PathBuf>,
    pub output: PathBuf,
}

fn default_doc_format() -> DocFormat {
    DocFormat::Jsonl
}

fn default_topic_format() -> TopicFormat {
    TopicFormat::Jsonl
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Backend {
    Http {
        endpoint: String,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
    Cache,
    /// `train` holds `{query_id, text}` lines giving one model per topic;
    /// without it a single model is fitted on the corpus.
    Stub {
        train: Option<PathBuf>,
        #[serde(default)]
        order: NgramOrder,
        #[serde(default)]
        greedy: bool,
    },
}

fn default_in_flight() -> usize {
    4
}

fn default_run_tag() -> String {
    "qgen".into()
}

fn default_depth() -> usize {
    DEFAULT_DEPTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    #[serde(default)]
    pub tokenization: TokenizationConfig,
    #[serde(default)]
    pub model: ScoringModel,
    pub expansion: Option<ExpansionConfig>,
    #[serde(default)]
    pub generation: GenerationParams,
    pub backend: Option<Backend>,
    pub rm3: Option<Rm3Config>,
    #[serde(default = "default_run_tag")]
    pub run_tag: String,
    #[serde(default = "default_depth")]
    pub depth: usize,
}

impl ExperimentConfig {
    /// Reads `path`, applies `key.path=value` overrides, and resolves
    /// relative paths against the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut value: toml::Table = text
            .parse()
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: Self = toml::Value::Table(value)
            .try_into()
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| UsageError(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [&mut paths.corpus, &mut paths.topics, &mut paths.index, &mut paths.output] {
            fix(p);
        }
        for p in [&mut paths.qrels, &mut paths.cache].into_iter().flatten() {
            fix(p);
        }
        if let Some(Backend::Stub { train: Some(p), .. }) = &mut self.backend {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| -> Result<()> { Err(UsageError(m).into()) };
        if self.expansion.is_some() && self.rm3.is_some() {
            return usage("`expansion` and `rm3` cannot both be set".into());
        }
        if self.expansion.is_some() && self.backend.is_none() {
            return usage("`expansion` needs a `backend` section".into());
        }
        if matches!(self.backend, Some(Backend::Cache)) && self.paths.cache.is_none() {
            return usage("cache backend needs `paths.cache`".into());
        }
        if let Some(Backend::Http { max_in_flight: 0, .. }) = self.backend {
            return usage("`max_in_flight` must be >= 1".into());
        }
        if self.depth == 0 {
            return usage("`depth` must be >= 1".into());
        }
        let checks = [
            self.model.validate(),
            self.generation.validate(),
            self.expansion.map_or(Ok(()), |e| e.validate()),
            self.rm3.map_or(Ok(()), |r| r.validate()),
        ];
        for c in checks {
            if let Err(e) = c {
                return usage(e.to_string());
            }
        }
        Ok(())
    }

    pub fn qrels_path(&self) -> Result<&Path> {
        self.paths
            .qrels
            .as_deref()
            .ok_or_else(|| UsageError("`paths.qrels` is required for this command".into()).into())
    }
}

/// `a.b.c=value`; the value is parsed as a TOML literal, falling back to a
/// bare string.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override `{item}` is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| UsageError(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
