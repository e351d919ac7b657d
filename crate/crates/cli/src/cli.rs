//! Argument parsing and command dispatch.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use qgen_core::eval::{evaluate_run, load_run, paired_t_test_by_query, DEFAULT_EVAL_DEPTH};
use qgen_core::synthetic::{SyntheticCollection, SyntheticConfig, STUDY_TEXT_LENGTH};

use crate::config::ExperimentConfig;
use crate::pipeline::{self, Experiment};

#[derive(Debug, Parser)]
#[command(name = "qgen", version, about = "Query expansion with generated texts")]
pub struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set generation.n_texts=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the inverted index.
    Index(ConfigArgs),
    /// Generate texts for every topic into the cache.
    Generate(ConfigArgs),
    /// Retrieve for every topic and write a TREC run plus manifest.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        run_tag: Option<String>,
    },
    /// Evaluate a run: per-query TSV and a summary line.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EVAL_DEPTH)]
        depth: usize,
        /// TSV destination; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Paired t-test on per-query AP of two runs.
    Ttest {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EVAL_DEPTH)]
        depth: usize,
    },
    /// MAP of top-k expansions, frequency and fixed weights.
    SweepK {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 5, 10, 20, 50, 100, 200, 500])]
        k: Vec<usize>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// MAP against the number of generated texts, averaged over subsamples.
    SweepNdocs {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 5, 10, 20, 50, 100])]
        n: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Subsampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the seeded synthetic collection and a ready-to-run config.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write each corpus document as a plain-text file.
    ExportText {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn read_run(path: &Path) -> Result<qgen_core::eval::Run> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_run(BufReader::new(f)).with_context(|| format!("reading run {}", path.display()))
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Index(args) => {
            let cfg = args.load()?;
            let index = pipeline::build_index(&cfg)?;
            eprintln!(
                "indexed {} documents, {} terms -> {}",
                index.num_docs(),
                index.num_terms(),
                cfg.paths.index.display()
            );
        }
        Command::Generate(args) => {
            let n = pipeline::cmd_generate(&args.load()?)?;
            eprintln!("cached texts for {n} queries");
        }
        Command::Run { config, output, run_tag } => {
            let mut cfg = config.load()?;
            if let Some(o) = output {
                cfg.paths.output = o;
            }
            if let Some(t) = run_tag {
                cfg.run_tag = t;
            }
            let outcome = pipeline::cmd_run(&cfg)?;
            eprintln!(
                "{} queries -> {} (manifest {})",
                outcome.results.len(),
                outcome.run_path.display(),
                outcome.manifest_path.display()
            );
        }
        Command::Eval { run, qrels, depth, out } => {
            let report = evaluate_run(&read_run(&run)?, &pipeline::load_qrels_file(&qrels)?, depth)?;
            let mut w = sink(out.as_deref())?;
            report.write_tsv(&mut w)?;
            w.flush()?;
            eprint!("{}", report.summary());
        }
        Command::Ttest { run_a, run_b, qrels, depth } => {
            let qrels = pipeline::load_qrels_file(&qrels)?;
            let a = evaluate_run(&read_run(&run_a)?, &qrels, depth)?;
            let b = evaluate_run(&read_run(&run_b)?, &qrels, depth)?;
            let t = paired_t_test_by_query(&a.ap_by_query(), &b.ap_by_query())?;
            println!("MAP_a\tMAP_b\tt\tp\tn\tsignificant");
            println!(
                "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
                a.map(),
                b.map(),
                t.t_statistic,
                t.p_value,
                t.n,
                if t.significant { "yes" } else { "no" }
            );
        }
        Command::SweepK { config, k, out } => {
            let exp = Experiment::open(&config.load()?)?;
            let rows = exp.sweep_k(&k)?;
            let mut w = sink(out.as_deref())?;
            pipeline::write_sweep_k(&mut w, &rows)?;
            w.flush()?;
        }
        Command::SweepNdocs { config, n, repeats, seed, out } => {
            let exp = Experiment::open(&config.load()?)?;
            let rows = exp.sweep_ndocs(&n, repeats, seed)?;
            let mut w = sink(out.as_deref())?;
            pipeline::write_sweep_ndocs(&mut w, &rows)?;
            w.flush()?;
        }
        Command::Synth { out, seed } => {
            let mut cfg = SyntheticConfig::default();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            SyntheticCollection::generate(&cfg)?.write_to(&out)?;
            let path = out.join("experiment.toml");
            std::fs::write(&path, synthetic_experiment())
                .with_context(|| format!("writing {}", path.display()))?;
            eprintln!("synthetic collection and {} written", path.display());
        }
        Command::ExportText { config, out } => {
            let n = pipeline::export_text(&config.load()?, &out)?;
            eprintln!("exported {n} documents to {}", out.display());
        }
    }
    Ok(())
}

/// Config shipped next to a synthetic collection.
pub fn synthetic_experiment() -> String {
    format!(
        r#"run_tag = "synthetic"

[paths]
corpus = "docs.jsonl"
topics = "topics.jsonl"
qrels = "qrels.txt"
index = "index.qidx"
cache = "cache"
output = "runs/expanded.txt"

[model]
name = "bm25_plus"

[expansion]
mode = "full"

[generation]
n_texts = 100
length = {STUDY_TEXT_LENGTH}
rng_seed = 7

[backend]
kind = "stub"
train = "train.jsonl"
order = "bigram"
"#
    )
}
