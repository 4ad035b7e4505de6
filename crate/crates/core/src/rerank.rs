//! Stage 3: joint (query, passage) scoring of the dense survivors.

use std::collections::HashSet;

use crate::corpus::KnowledgeBase;
use crate::passage::{top_ranked, RankedPassage, Stage};
use crate::provider::{ProviderError, RetryPolicy};
use crate::textnorm::NormalizedText;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum RerankError {
    #[error("no candidates to rerank")]
    NoCandidates,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("candidate {0} is not in the knowledge base")]
    UnknownChunk(String),
    #[error("scorer failed on pairs for chunks [{}] after {attempts} attempts: {source}", chunk_ids.join(", "))]
    PairFailed {
        chunk_ids: Vec<String>,
        attempts: u32,
        #[source]
        source: ProviderError,
    },
}

/// Scores (query, passage) pairs jointly, one finite real per pair.
pub trait PairScorer: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ProviderError>;
}

/// Offline scorer: Jaccard overlap of the whitespace token sets.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

impl OverlapScorer {
    pub fn overlap(query: &str, passage: &str) -> f64 {
        let q: HashSet<&str> = query.split_whitespace().collect();
        let p: HashSet<&str> = passage.split_whitespace().collect();
        let union = q.union(&p).count();
        if union == 0 {
            return 0.0;
        }
        q.intersection(&p).count() as f64 / union as f64
    }
}

impl PairScorer for OverlapScorer {
    fn id(&self) -> &str {
        "token-overlap"
    }

    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ProviderError> {
        Ok(pairs.iter().map(|(q, p)| Self::overlap(q, p)).collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RerankOptions {
    pub batch_size: usize,
    pub retry: RetryPolicy,
    pub jobs: usize,
    /// Post-scaling applied only to logged scores; never changes order.
    pub temperature: f64,
}

impl Default for RerankOptions {
    fn default() -> Self {
        Self {
            batch_size: 16,
            retry: RetryPolicy::default(),
            jobs: 1,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// Divides every score by `temperature`.
pub fn apply_temperature(raw: &[f64], temperature: f64) -> Result<Vec<f64>, RerankError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(RerankError::Temperature(temperature));
    }
    Ok(raw.iter().map(|s| s / temperature).collect())
}

/// Scores every candidate against `query` and keeps the top `k`.
pub fn rerank(
    scorer: &dyn PairScorer,
    kb: &KnowledgeBase,
    query: &NormalizedText,
    candidates: &[RankedPassage],
    k: usize,
    opts: &RerankOptions,
) -> Result<Vec<RankedPassage>, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::NoCandidates);
    }
    if k == 0 {
        return Err(RerankError::ZeroK);
    }
    if !(opts.temperature.is_finite() && opts.temperature > 0.0) {
        return Err(RerankError::Temperature(opts.temperature));
    }
    let pairs = candidates
        .iter()
        .map(|c| {
            let chunk = kb
                .get(&c.chunk_id)
                .ok_or_else(|| RerankError::UnknownChunk(c.chunk_id.clone()))?;
            Ok((c.chunk_id.as_str(), (query.as_str().to_owned(), chunk.light.as_str().to_owned())))
        })
        .collect::<Result<Vec<_>, RerankError>>()?;

    let batches: Vec<_> = pairs.chunks(opts.batch_size.max(1)).collect();
    let mut scores = Vec::with_capacity(pairs.len());
    for group in batches.chunks(opts.jobs.max(1)) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = group
                .iter()
                .map(|batch| s.spawn(move || score_batch(scorer, batch, &opts.retry)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scoring worker panicked"))
                .collect()
        });
        for r in results {
            scores.extend(r?);
        }
    }

    let tempered = apply_temperature(&scores, opts.temperature)?;
    for ((id, _), t) in pairs.iter().zip(&tempered) {
        tracing::debug!(chunk = %id, scorer = scorer.id(), tempered = t, "rerank score");
    }
    let scored = pairs
        .iter()
        .zip(scores)
        .map(|((id, _), s)| ((*id).to_owned(), s))
        .collect();
    Ok(top_ranked(scored, k, Stage::Rerank))
}

fn score_batch(
    scorer: &dyn PairScorer,
    batch: &[(&str, (String, String))],
    retry: &RetryPolicy,
) -> Result<Vec<f64>, RerankError> {
    let pairs: Vec<(String, String)> = batch.iter().map(|(_, p)| p.clone()).collect();
    retry
        .run(|_| {
            let scores = scorer.score(&pairs)?;
            if scores.len() != pairs.len() {
                return Err(ProviderError::Protocol(format!(
                    "{} scores for {} pairs",
                    scores.len(),
                    pairs.len()
                )));
            }
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(ProviderError::Protocol("non-finite score".into()));
            }
            Ok(scores)
        })
        .map_err(|(source, attempts)| RerankError::PairFailed {
            chunk_ids: batch.iter().map(|(id, _)| (*id).to_owned()).collect(),
            attempts,
            source,
        })
}
