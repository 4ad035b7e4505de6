use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Cascade stage that produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sparse,
    Dense,
    Rerank,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Sparse => "sparse",
            Stage::Dense => "dense",
            Stage::Rerank => "rerank",
        })
    }
}

/// A chunk reference with the score one stage assigned it.
///
/// Within a result list scores are non-increasing and ids are distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPassage {
    pub chunk_id: String,
    pub score: f64,
    pub stage: Stage,
}

/// Descending score, then ascending chunk id.
pub fn ranking_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Sorts by [`ranking_order`] and keeps the first `limit`.
pub(crate) fn top_ranked(mut scored: Vec<(String, f64)>, limit: usize, stage: Stage) -> Vec<RankedPassage> {
    let by = |a: &(String, f64), b: &(String, f64)| ranking_order((&a.0, a.1), (&b.0, b.1));
    if scored.len() > limit && limit > 0 {
        scored.select_nth_unstable_by(limit - 1, by);
        scored.truncate(limit);
    }
    scored.sort_by(by);
    scored.truncate(limit);
    scored
        .into_iter()
        .map(|(chunk_id, score)| RankedPassage {
            chunk_id,
            score,
            stage,
        })
        .collect()
}
