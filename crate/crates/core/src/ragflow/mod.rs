//! End-to-end flow for one multiple-choice item: cascade retrieval, prompt
//! assembly, the model call and answer extraction.

mod answer;
mod prompt;
mod stub;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkConfig, KnowledgeBase};
use crate::dense::{embed_query, retrieve_dense, DenseError, EmbeddingProvider, VectorStore, DEFAULT_BATCH_SIZE, DEFAULT_DIMENSION};
use crate::passage::RankedPassage;
use crate::provider::{ProviderError, RetryPolicy};
use crate::rerank::{rerank, PairScorer, RerankError, RerankOptions, DEFAULT_TEMPERATURE};
use crate::sparse::{Bm25Index, Bm25Params};
use crate::textnorm::{NormalizedText, Normalizer};

pub use answer::{parse_answer, AnswerParseError};
pub use prompt::{FewShotExample, PromptBundle, PromptContext, PromptError, PromptTemplate};
pub use stub::{EchoLlm, FixedLetterLlm};

/// Option label, `A` through `F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Letter(char);

impl Letter {
    pub const ALL: [Letter; 6] = [Letter('A'), Letter('B'), Letter('C'), Letter('D'), Letter('E'), Letter('F')];

    pub fn from_char(c: char) -> Option<Self> {
        ('A'..='F').contains(&c).then_some(Self(c))
    }

    pub fn as_char(self) -> char {
        self.0
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not an option letter: {0:?}")]
pub struct LetterError(String);

impl FromStr for Letter {
    type Err = LetterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut it = s.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => Self::from_char(c).ok_or_else(|| LetterError(s.to_owned())),
            _ => Err(LetterError(s.to_owned())),
        }
    }
}

impl TryFrom<String> for Letter {
    type Error = LetterError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Letter> for String {
    fn from(l: Letter) -> String {
        l.0.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Beginner,
    Intermediate,
    Advanced,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Beginner => "beginner",
            Difficulty::Intermediate => "intermediate",
            Difficulty::Advanced => "advanced",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "beginner" => Ok(Self::Beginner),
            "intermediate" => Ok(Self::Intermediate),
            "advanced" => Ok(Self::Advanced),
            other => Err(format!("unknown difficulty {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub question: String,
    pub options: BTreeMap<Letter, String>,
    #[serde(default)]
    pub gold: Option<Letter>,
    #[serde(default)]
    pub difficulty: Option<Difficulty>,
}

impl McqItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.options.len() < 2 {
            return Err(format!("item {}: needs at least two options", self.id));
        }
        if let Some(g) = self.gold {
            if !self.options.contains_key(&g) {
                return Err(format!("item {}: gold {g} is not an option", self.id));
            }
        }
        Ok(())
    }

    pub fn letters(&self) -> Vec<Letter> {
        self.options.keys().copied().collect()
    }

    /// Text used for retrieval: the question, optionally followed by the
    /// option texts.
    pub fn query_text(&self, include_options: bool) -> String {
        let mut q = self.question.clone();
        if include_options {
            for t in self.options.values() {
                q.push(' ');
                q.push_str(t);
            }
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingOptions {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingOptions {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub bm25: Bm25Params,
    pub chunk: ChunkConfig,
    pub dimension: usize,
    pub embed_batch_size: usize,
    pub rerank_temperature: f64,
    pub query_includes_options: bool,
    pub few_shot_count: usize,
    pub decoding: DecodingOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            m: 200,
            k: 5,
            bm25: Bm25Params::default(),
            chunk: ChunkConfig::default(),
            dimension: DEFAULT_DIMENSION,
            embed_batch_size: DEFAULT_BATCH_SIZE,
            rerank_temperature: DEFAULT_TEMPERATURE,
            query_includes_options: true,
            few_shot_count: 2,
            decoding: DecodingOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(1 <= self.k && self.k <= self.m && self.m <= self.n) {
            return bad(format!("need 1 <= k <= m <= n, got k={} m={} n={}", self.k, self.m, self.n));
        }
        if self.dimension == 0 || self.embed_batch_size == 0 {
            return bad("dimension and embed_batch_size must be positive".into());
        }
        if !(self.rerank_temperature > 0.0 && self.rerank_temperature.is_finite()) {
            return bad(format!("rerank_temperature must be positive, got {}", self.rerank_temperature));
        }
        self.bm25.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.chunk.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// No retrieval; the prompt has no reference block.
    Baseline,
    Rag,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Rag => "rag",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "rag" => Ok(Mode::Rag),
            other => Err(format!("unknown mode {other:?} (expected baseline or rag)")),
        }
    }
}

pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub bundle: &'a PromptBundle,
    pub decoding: DecodingOptions,
}

/// A text-completion model.
pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError>;
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("invalid item: {0}")]
    Item(String),
    #[error("dense stage: {0}")]
    Dense(#[from] DenseError),
    #[error("rerank stage: {0}")]
    Rerank(#[from] RerankError),
    #[error("prompt stage: {0}")]
    Prompt(#[from] PromptError),
    #[error("llm stage: failed after {attempts} attempts: {source}")]
    Llm {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("retrieval stage: chunk {0} missing from the knowledge base")]
    MissingChunk(String),
    #[error("few-shot selection needs {needed} labeled items, only {available} available")]
    InsufficientExamples { needed: usize, available: usize },
}

/// Picks `count` labeled items with a seeded generator. Candidates are
/// considered in id order, so the result does not depend on input order.
pub fn select_few_shot(dev: &[McqItem], count: usize, seed: u64) -> Result<Vec<FewShotExample>, PipelineError> {
    let mut labeled: Vec<&McqItem> = dev.iter().filter(|i| i.gold.is_some()).collect();
    if labeled.len() < count {
        return Err(PipelineError::InsufficientExamples {
            needed: count,
            available: labeled.len(),
        });
    }
    labeled.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, labeled.len(), count)
        .into_iter()
        .map(|i| {
            let item = labeled[i];
            FewShotExample {
                id: item.id.clone(),
                question: item.question.clone(),
                options: item.options.clone(),
                answer: item.gold.expect("filtered to labeled"),
                reasoning: None,
            }
        })
        .collect())
}

/// One stage's ranked output as recorded in traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageHit {
    pub id: String,
    pub score: f64,
}

fn hits(ps: &[RankedPassage]) -> Vec<StageHit> {
    ps.iter()
        .map(|p| StageHit {
            id: p.chunk_id.clone(),
            score: p.score,
        })
        .collect()
}

/// The three cascade outputs for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub query_light: NormalizedText,
    pub sparse: Vec<RankedPassage>,
    pub dense: Vec<RankedPassage>,
    pub rerank: Vec<RankedPassage>,
}

/// Indexes and providers the cascade reads from.
pub struct Retriever<'a> {
    pub kb: &'a KnowledgeBase,
    pub sparse: &'a Bm25Index,
    pub vectors: &'a VectorStore,
    pub normalizer: &'a Normalizer,
    pub embedder: &'a dyn EmbeddingProvider,
    pub scorer: &'a dyn PairScorer,
    pub retry: RetryPolicy,
}

impl Retriever<'_> {
    /// Sparse top-n, dense top-m of those, reranked top-k of those. An empty
    /// sparse result short-circuits the later stages.
    pub fn retrieve(&self, query_raw: &str, cfg: &PipelineConfig) -> Result<Retrieval, PipelineError> {
        let query_light = self.normalizer.normalize_light(query_raw);
        let full = self.normalizer.full_from_light(&query_light);
        let sparse = self.sparse.retrieve(full.as_slice(), cfg.n);
        if sparse.is_empty() {
            return Ok(Retrieval {
                query_light,
                sparse,
                dense: Vec::new(),
                rerank: Vec::new(),
            });
        }
        let qv = embed_query(self.embedder, query_light.as_str(), &self.retry)?;
        let dense = retrieve_dense(&qv, &sparse, self.vectors, cfg.m)?;
        let opts = RerankOptions {
            retry: self.retry,
            temperature: cfg.rerank_temperature,
            ..RerankOptions::default()
        };
        let reranked = rerank(self.scorer, self.kb, &query_light, &dense, cfg.k, &opts)?;
        Ok(Retrieval {
            query_light,
            sparse,
            dense,
            rerank: reranked,
        })
    }
}

/// Per-item record of everything the pipeline did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTrace {
    pub item_id: String,
    pub mode: Mode,
    /// Stages that ran, in order.
    pub stages_run: Vec<String>,
    pub sparse: Vec<StageHit>,
    pub dense: Vec<StageHit>,
    pub rerank: Vec<StageHit>,
    pub prompt: String,
    pub responses: Vec<String>,
    pub predicted: Option<Letter>,
    pub parse_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    /// `None` when no letter could be extracted (an invalid answer).
    pub predicted: Option<Letter>,
    pub trace: ItemTrace,
}

pub struct Pipeline<'a> {
    /// Required in rag mode; ignored in baseline mode.
    pub retriever: Option<Retriever<'a>>,
    pub llm: &'a dyn LlmProvider,
    pub template: &'a PromptTemplate,
    pub examples: &'a [FewShotExample],
    pub cfg: &'a PipelineConfig,
    pub mode: Mode,
    pub retry: RetryPolicy,
}

impl Pipeline<'_> {
    pub fn run(&self, item: &McqItem) -> Result<PipelineOutcome, PipelineError> {
        item.validate().map_err(PipelineError::Item)?;
        let mut stages_run = Vec::new();
        let (retrieval, contexts) = match self.mode {
            Mode::Baseline => (None, None),
            Mode::Rag => {
                let r = self
                    .retriever
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("rag mode needs a retriever".into()))?;
                let got = r.retrieve(&item.query_text(self.cfg.query_includes_options), self.cfg)?;
                stages_run.push("sparse".to_owned());
                if !got.sparse.is_empty() {
                    stages_run.extend(["dense".to_owned(), "rerank".to_owned()]);
                }
                let contexts = got
                    .rerank
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let chunk = r.kb.get(&p.chunk_id).ok_or_else(|| PipelineError::MissingChunk(p.chunk_id.clone()))?;
                        Ok(PromptContext {
                            rank: i + 1,
                            score: p.score,
                            text: chunk.original.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>, PipelineError>>()?;
                (Some(got), Some(contexts))
            }
        };
        if contexts.as_ref().is_some_and(|c| c.len() > self.cfg.k) {
            return Err(PromptError::TooManyContexts {
                found: contexts.as_ref().map_or(0, Vec::len),
                limit: self.cfg.k,
            }
            .into());
        }
        let bundle = self
            .template
            .bundle(&item.question, &item.options, self.examples.to_vec(), contexts);
        let prompt = self.template.render(&bundle);
        let request = CompletionRequest {
            prompt: &prompt,
            bundle: &bundle,
            decoding: self.cfg.decoding,
        };
        let valid = item.letters();
        let mut responses = Vec::new();
        let mut predicted = None;
        let mut parse_error = None;
        // One extra call when the first response cannot be parsed.
        for _ in 0..2 {
            let raw = self
                .retry
                .run(|_| self.llm.complete(&request))
                .map_err(|(source, attempts)| PipelineError::Llm { attempts, source })?;
            let parsed = parse_answer(&raw, &valid);
            responses.push(raw);
            match parsed {
                Ok(l) => {
                    predicted = Some(l);
                    parse_error = None;
                    break;
                }
                Err(e) => parse_error = Some(e.to_string()),
            }
        }
        let (sparse, dense, reranked) = retrieval
            .map(|r| (hits(&r.sparse), hits(&r.dense), hits(&r.rerank)))
            .unwrap_or_default();
        Ok(PipelineOutcome {
            predicted,
            trace: ItemTrace {
                item_id: item.id.clone(),
                mode: self.mode,
                stages_run,
                sparse,
                dense,
                rerank: reranked,
                prompt,
                responses,
                predicted,
                parse_error,
            },
        })
    }
}

#[cfg(test)]
mod tests;
