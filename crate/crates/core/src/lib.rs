//! Query expansion from generated texts.
//!
//! Short queries are expanded with texts generated from the query itself,
//! then documents are ranked with BM25+ or a Dirichlet-smoothed language
//! model. RM3 pseudo-relevance feedback and TREC-style evaluation provide the
//! baselines and the measurement side.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod generation;
pub mod index;
pub mod ranking;
pub mod rm3;
pub mod synthetic;

pub use corpus::{Document, Qrels, TokenizationConfig, Tokenizer, Topic};
pub use error::{Error, Result};
pub use eval::{EvalReport, TTestResult};
pub use expansion::{ExpansionConfig, ExpansionMode};
pub use generation::{GeneratedSet, GenerationParams, GeneratorBackend};
pub use index::InvertedIndex;
pub use ranking::{Bm25Params, DirichletParams, Hit, RunResult, ScoringModel, WeightedQuery};
pub use rm3::Rm3Config;
