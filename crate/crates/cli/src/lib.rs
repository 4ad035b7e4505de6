//! `hybridrag` command line: build the knowledge base, index it, query the
//! cascade, answer single questions and evaluate datasets.

pub mod commands;
pub mod config;
pub mod sources;

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use hybridrag_core::ragflow::{Letter, Mode};

use crate::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hybridrag", version, about = "Hybrid sparse/dense/rerank retrieval for Arabic multiple-choice QA")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use deterministic offline providers (no network).
    #[arg(long, global = true)]
    pub stub_providers: bool,
    /// Maximum parallel workers.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    #[arg(long, global = true)]
    pub vectors: Option<PathBuf>,
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sparse candidates.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Dense candidates.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Passages placed in the prompt.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub few_shot: Option<usize>,
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            stub_providers: self.stub_providers,
            jobs: self.jobs,
            mode: self.mode,
            seed: self.seed,
            n: self.n,
            m: self.m,
            k: self.k,
            few_shot: self.few_shot,
            kb: self.kb.clone(),
            index: self.index.clone(),
            vectors: self.vectors.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk source files (.jsonl fatwas, .html, .xml, .docx, .txt) into the store.
    BuildKb {
        #[arg(required = true)]
        sources: Vec<PathBuf>,
    },
    /// Build the BM25 index and the vector cache for the store.
    Index,
    /// Show each cascade stage's ranking for a question.
    Query {
        question: String,
        #[arg(long, default_value_t = 10)]
        show: usize,
        #[arg(long)]
        json: bool,
    },
    /// Answer one question; options are given as LETTER=TEXT.
    Answer {
        question: String,
        #[arg(long = "option", value_parser = parse_option, required = true)]
        options: Vec<(Letter, String)>,
        /// Labeled items to draw few-shot examples from.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Evaluate a labeled dataset and write trace and report files.
    Eval {
        dataset: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, default_value = "eval-out")]
        out: PathBuf,
    },
    /// Compare two report.json files.
    Compare {
        first: PathBuf,
        second: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn parse_option(s: &str) -> Result<(Letter, String), String> {
    let (l, t) = s.split_once('=').ok_or("expected LETTER=TEXT")?;
    Ok((l.trim().parse().map_err(|e| format!("{e}"))?, t.to_owned()))
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(cli.global.config.as_deref(), &cli.global.overrides())?;
    match &cli.command {
        Command::BuildKb { sources } => commands::cmd_build_kb(&cfg, sources, out),
        Command::Index => commands::cmd_index(&cfg, out),
        Command::Query { question, show, json } => commands::cmd_query(&cfg, question, *show, *json, out),
        Command::Answer {
            question,
            options,
            dev,
            json,
        } => commands::cmd_answer(&cfg, question, options, dev.as_deref(), *json, out),
        Command::Eval { dataset, dev, out: dir } => commands::cmd_eval(&cfg, dataset, dev.as_deref(), dir, out),
        Command::Compare { first, second, json } => commands::cmd_compare(&cfg, first, second, *json, out),
    }
}
