use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hybridrag_core::corpus::{load_kb, save_kb, KnowledgeBase};
use hybridrag_core::dense::{embed_corpus, DenseError, EmbedOptions, EmbeddingCache, EmbeddingProvider, HashedTrigramEmbedder, VectorStore};
use hybridrag_core::evalharness::{compare_runs, config_digest, evaluate, exclude_examples, load_dataset, run_items, EvalReport};
use hybridrag_core::passage::RankedPassage;
use hybridrag_core::provider::RetryPolicy;
use hybridrag_core::ragflow::{select_few_shot, EchoLlm, FewShotExample, Letter, LlmProvider, McqItem, Mode, Pipeline, Retriever};
use hybridrag_core::remote::{ChatLlm, HttpEmbedder, HttpPairScorer};
use hybridrag_core::rerank::{OverlapScorer, PairScorer};
use hybridrag_core::sparse::Bm25Index;
use hybridrag_core::textnorm::Normalizer;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::sources::{chunk_source, collect_sources};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {what} {}", path.display()))?,
    ))
}

fn header(out: &mut dyn Write, cfg: &RunConfig) -> Result<()> {
    writeln!(out, "# config: {}", cfg.echo())?;
    Ok(())
}

pub fn cmd_build_kb(cfg: &RunConfig, inputs: &[PathBuf], out: &mut dyn Write) -> Result<()> {
    let normalizer = cfg.normalizer()?;
    let sources = collect_sources(inputs)?;
    if sources.is_empty() {
        bail!("no sources");
    }
    header(out, cfg)?;
    let mut failures = Vec::new();
    let mut chunks = Vec::new();
    for path in &sources {
        match chunk_source(path, &cfg.pipeline.chunk, &normalizer) {
            Ok(sc) => {
                let tokens: usize = sc.chunks.iter().map(|c| c.token_count).sum();
                writeln!(out, "{:<40} {:>6} chunks {:>8} tokens", sc.source_id, sc.chunks.len(), tokens)?;
                for w in &sc.warnings {
                    writeln!(out, "  skipped {w}")?;
                }
                chunks.extend(sc.chunks);
            }
            Err(e) => failures.push(format!("{}: {e:#}", path.display())),
        }
    }
    if !failures.is_empty() {
        for f in &failures {
            writeln!(out, "FAILED {f}")?;
        }
        bail!("{} of {} sources failed to parse", failures.len(), sources.len());
    }
    let kb = KnowledgeBase::new(chunks)?;
    let mut w = create(&cfg.paths.kb)?;
    save_kb(&mut w, kb.chunks(), &cfg.pipeline.chunk)?;
    w.flush()?;
    let counts: Vec<usize> = kb.chunks().iter().map(|c| c.token_count).collect();
    let total: usize = counts.iter().sum();
    let (min, max) = (counts.iter().min().copied().unwrap_or(0), counts.iter().max().copied().unwrap_or(0));
    let mean = if counts.is_empty() { 0.0 } else { total as f64 / counts.len() as f64 };
    writeln!(
        out,
        "sources: {}  chunks: {}  tokens: {total}  per chunk min/mean/max: {min}/{mean:.1}/{max}",
        sources.len(),
        kb.len()
    )?;
    writeln!(out, "wrote {}", cfg.paths.kb.display())?;
    Ok(())
}

pub fn embedder(cfg: &RunConfig) -> Result<Box<dyn EmbeddingProvider>> {
    if cfg.stub_providers {
        return Ok(Box::new(HashedTrigramEmbedder::new(cfg.pipeline.dimension)));
    }
    let ep = cfg
        .providers
        .embedding
        .clone()
        .ok_or_else(|| anyhow!("no embedding provider configured; add [providers.embedding] or pass --stub-providers"))?;
    Ok(Box::new(HttpEmbedder::new(ep, cfg.pipeline.dimension)?))
}

pub fn scorer(cfg: &RunConfig) -> Result<Box<dyn PairScorer>> {
    if cfg.stub_providers {
        return Ok(Box::new(OverlapScorer));
    }
    let ep = cfg
        .providers
        .scorer
        .clone()
        .ok_or_else(|| anyhow!("no scorer provider configured; add [providers.scorer] or pass --stub-providers"))?;
    Ok(Box::new(HttpPairScorer::new(ep)?))
}

pub fn llm(cfg: &RunConfig, normalizer: &Normalizer) -> Result<Box<dyn LlmProvider>> {
    if cfg.stub_providers {
        return Ok(Box::new(EchoLlm::new(normalizer.clone())));
    }
    let ep = cfg
        .providers
        .llm
        .clone()
        .ok_or_else(|| anyhow!("no llm provider configured; add [providers.llm] or pass --stub-providers"))?;
    Ok(Box::new(ChatLlm::new(ep)?))
}

fn load_cache(path: &Path, provider: &dyn EmbeddingProvider) -> Result<Option<EmbeddingCache>> {
    if !path.exists() {
        return Ok(None);
    }
    let cache = EmbeddingCache::load(open(path, "vector cache")?)?;
    if cache.provider_id() != provider.id() || cache.dimension() != provider.dimension() {
        return Ok(None);
    }
    Ok(Some(cache))
}

fn embed_options(cfg: &RunConfig) -> EmbedOptions {
    EmbedOptions {
        batch_size: cfg.pipeline.embed_batch_size,
        jobs: cfg.jobs,
        ..EmbedOptions::default()
    }
}

pub fn cmd_index(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    header(out, cfg)?;
    let (kb_header, chunks) = load_kb(open(&cfg.paths.kb, "knowledge base")?)?;
    let kb = KnowledgeBase::new(chunks)?;
    let index = Bm25Index::build(kb.chunks(), cfg.pipeline.bm25)?;
    let mut w = create(&cfg.paths.index)?;
    index.save(&mut w)?;
    w.flush()?;
    writeln!(
        out,
        "bm25: {} chunks, {} terms, avg length {:.2} (chunked with target {})",
        index.doc_count(),
        index.term_count(),
        index.avg_doc_len(),
        kb_header.chunk_config.target_tokens
    )?;

    let provider = embedder(cfg)?;
    let existing = load_cache(&cfg.paths.vectors, provider.as_ref())?;
    let had_cache = existing.as_ref().is_some_and(|c| !c.is_empty());
    let mut cache = existing.unwrap_or_else(|| EmbeddingCache::for_provider(provider.as_ref()));
    let before = cache.len();
    let result = embed_corpus(provider.as_ref(), kb.chunks(), &mut cache, &embed_options(cfg));
    let live = kb
        .chunks()
        .iter()
        .map(|c| hybridrag_core::dense::content_hash(c.light.as_str()))
        .collect();
    cache.retain_hashes(&live);
    let mut w = create(&cfg.paths.vectors)?;
    cache.save(&mut w)?;
    w.flush()?;
    match result {
        Ok(_) => {}
        Err(e @ DenseError::BatchFailed { .. }) if !had_cache && before == 0 && cache.is_empty() => {
            return Err(anyhow!(e).context(
                "embedding provider unreachable and no vector cache exists; rerun with --stub-providers for offline mode",
            ));
        }
        Err(e) => return Err(anyhow!(e).context(format!("partial vector cache ({} vectors) kept", cache.len()))),
    }
    writeln!(
        out,
        "vectors: {} cached for {} ({} dims), {} newly embedded",
        cache.len(),
        provider.id(),
        provider.dimension(),
        cache.len().saturating_sub(before)
    )?;
    writeln!(out, "wrote {} and {}", cfg.paths.index.display(), cfg.paths.vectors.display())?;
    Ok(())
}

/// Knowledge base, indexes and providers loaded for retrieval.
pub struct Loaded {
    pub kb: KnowledgeBase,
    pub index: Bm25Index,
    pub vectors: VectorStore,
    pub embedder: Box<dyn EmbeddingProvider>,
    pub scorer: Box<dyn PairScorer>,
}

pub fn load_artifacts(cfg: &RunConfig) -> Result<Loaded> {
    let (_, chunks) = load_kb(open(&cfg.paths.kb, "knowledge base")?)?;
    let kb = KnowledgeBase::new(chunks)?;
    let index = Bm25Index::load(open(&cfg.paths.index, "bm25 index")?)?;
    let embedder = embedder(cfg)?;
    let mut cache = load_cache(&cfg.paths.vectors, embedder.as_ref())?.ok_or_else(|| {
        anyhow!(
            "no vector cache for provider {} at {}; run `index` first",
            embedder.id(),
            cfg.paths.vectors.display()
        )
    })?;
    let vectors = embed_corpus(embedder.as_ref(), kb.chunks(), &mut cache, &embed_options(cfg))?;
    Ok(Loaded {
        kb,
        index,
        vectors,
        embedder,
        scorer: scorer(cfg)?,
    })
}

impl Loaded {
    pub fn retriever<'a>(&'a self, normalizer: &'a Normalizer) -> Retriever<'a> {
        Retriever {
            kb: &self.kb,
            sparse: &self.index,
            vectors: &self.vectors,
            normalizer,
            embedder: self.embedder.as_ref(),
            scorer: self.scorer.as_ref(),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Serialize)]
struct Hit<'a> {
    id: &'a str,
    score: f64,
}

fn hits(ps: &[RankedPassage]) -> Vec<Hit<'_>> {
    ps.iter()
        .map(|p| Hit {
            id: &p.chunk_id,
            score: p.score,
        })
        .collect()
}

pub fn cmd_query(cfg: &RunConfig, question: &str, show: usize, as_json: bool, out: &mut dyn Write) -> Result<()> {
    let normalizer = cfg.normalizer()?;
    let loaded = load_artifacts(cfg)?;
    let r = loaded.retriever(&normalizer).retrieve(question, &cfg.pipeline)?;
    if as_json {
        let v = json!({
            "config": cfg,
            "query": r.query_light,
            "sparse": hits(&r.sparse),
            "dense": hits(&r.dense),
            "rerank": hits(&r.rerank),
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        return Ok(());
    }
    header(out, cfg)?;
    writeln!(out, "query: {}", r.query_light.as_str())?;
    for (name, stage) in [("sparse", &r.sparse), ("dense", &r.dense), ("rerank", &r.rerank)] {
        writeln!(out, "{name}: {} results", stage.len())?;
        for (i, p) in stage.iter().take(show).enumerate() {
            writeln!(out, "  {:>3}. {:<30} {:>10.4}", i + 1, p.chunk_id, p.score)?;
        }
    }
    if let Some(top) = r.rerank.first().and_then(|p| loaded.kb.get(&p.chunk_id)) {
        writeln!(out, "top passage:\n{}", top.original)?;
    }
    Ok(())
}

fn few_shot(cfg: &RunConfig, dev: Option<&Path>, fallback: &[McqItem]) -> Result<Vec<FewShotExample>> {
    if cfg.pipeline.few_shot_count == 0 {
        return Ok(Vec::new());
    }
    let pool = match dev {
        Some(p) => load_dataset(open(p, "dev set")?, true)?,
        None => fallback.to_vec(),
    };
    Ok(select_few_shot(&pool, cfg.pipeline.few_shot_count, cfg.seed)?)
}

pub fn cmd_answer(
    cfg: &RunConfig,
    question: &str,
    options: &[(Letter, String)],
    dev: Option<&Path>,
    as_json: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let item = McqItem {
        id: "cli".into(),
        question: question.to_owned(),
        options: options.iter().cloned().collect(),
        gold: None,
        difficulty: None,
    };
    item.validate().map_err(|e| anyhow!(e))?;
    let examples = if dev.is_some() { few_shot(cfg, dev, &[])? } else { Vec::new() };
    let normalizer = cfg.normalizer()?;
    let template = cfg.template()?;
    let llm = llm(cfg, &normalizer)?;
    let loaded = match cfg.mode {
        Mode::Rag => Some(load_artifacts(cfg)?),
        Mode::Baseline => None,
    };
    let pipeline = Pipeline {
        retriever: loaded.as_ref().map(|l| l.retriever(&normalizer)),
        llm: llm.as_ref(),
        template: &template,
        examples: &examples,
        cfg: &cfg.pipeline,
        mode: cfg.mode,
        retry: RetryPolicy::default(),
    };
    let outcome = pipeline.run(&item)?;
    if as_json {
        writeln!(out, "{}", serde_json::to_string_pretty(&json!({ "config": cfg, "trace": outcome.trace }))?)?;
    } else {
        header(out, cfg)?;
        match outcome.predicted {
            Some(l) => writeln!(out, "{l}")?,
            None => writeln!(out, "invalid: {}", outcome.trace.parse_error.unwrap_or_default())?,
        }
    }
    Ok(())
}

/// Machine-readable eval output.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: RunConfig,
    pub mode: Mode,
    pub few_shot_ids: Vec<String>,
    pub failed: BTreeMap<String, String>,
    pub report: EvalReport,
}

pub fn cmd_eval(cfg: &RunConfig, dataset: &Path, dev: Option<&Path>, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let items = load_dataset(open(dataset, "dataset")?, true)?;
    let examples = few_shot(cfg, dev, &items)?;
    let items = exclude_examples(items, &examples);
    let normalizer = cfg.normalizer()?;
    let template = cfg.template()?;
    let llm = llm(cfg, &normalizer)?;
    let loaded = match cfg.mode {
        Mode::Rag => Some(load_artifacts(cfg)?),
        Mode::Baseline => None,
    };
    let pipeline = Pipeline {
        retriever: loaded.as_ref().map(|l| l.retriever(&normalizer)),
        llm: llm.as_ref(),
        template: &template,
        examples: &examples,
        cfg: &cfg.pipeline,
        mode: cfg.mode,
        retry: RetryPolicy::default(),
    };
    tracing::info!(items = items.len(), mode = %cfg.mode, "evaluating");
    let mut run = run_items(&pipeline, &items, cfg.jobs);
    run.traces.sort_by(|a, b| a.item_id.cmp(&b.item_id));

    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut w = create(&out_dir.join("trace.jsonl"))?;
    serde_json::to_writer(&mut w, &json!({ "config": cfg }))?;
    writeln!(w)?;
    for t in &run.traces {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w)?;
    }
    w.flush()?;

    let failed: BTreeMap<String, String> = run.failures.iter().map(|(id, e)| (id.clone(), e.to_string())).collect();
    header(out, cfg)?;
    if run.verdicts.is_empty() {
        bail!("no items were evaluated ({} failed)", failed.len());
    }
    let report = evaluate(run.verdicts, config_digest(cfg))?;
    let file = ReportFile {
        config: cfg.clone(),
        mode: cfg.mode,
        few_shot_ids: examples.iter().map(|e| e.id.clone()).collect(),
        failed: failed.clone(),
        report,
    };
    let mut w = create(&out_dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &file)?;
    writeln!(w)?;
    w.flush()?;
    let text = format!("# config: {}\n# mode: {}\n{}", cfg.echo(), cfg.mode, file.report.render_text());
    std::fs::write(out_dir.join("report.txt"), &text)?;
    write!(out, "mode: {}\n{}", cfg.mode, file.report.render_text())?;
    if !failed.is_empty() {
        for (id, e) in &failed {
            writeln!(out, "FAILED {id}: {e}")?;
        }
        bail!("{} items failed", failed.len());
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<ReportFile> {
    serde_json::from_reader(open(path, "report")?).with_context(|| format!("parsing report {}", path.display()))
}

pub fn cmd_compare(cfg: &RunConfig, first: &Path, second: &Path, as_json: bool, out: &mut dyn Write) -> Result<()> {
    let (a, b) = (read_report(first)?, read_report(second)?);
    let cmp = compare_runs(&a.report, &b.report)?;
    if as_json {
        let v = json!({
            "config": cfg,
            "first": { "path": first, "mode": a.mode, "config_digest": a.report.config_digest },
            "second": { "path": second, "mode": b.mode, "config_digest": b.report.config_digest },
            "comparison": cmp,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        return Ok(());
    }
    header(out, cfg)?;
    writeln!(out, "first: {} ({})  second: {} ({})", first.display(), a.mode, second.display(), b.mode)?;
    write!(out, "{}", cmp.render_text(&a.report, &b.report))?;
    Ok(())
}
