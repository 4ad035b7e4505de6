//! Dataset loading, exact-match scoring and run comparison.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ragflow::{Difficulty, FewShotExample, ItemTrace, Letter, McqItem, Pipeline, PipelineError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("record {record}: {message}")]
    Record { record: usize, message: String },
    #[error("record {record}: missing required field {field:?}")]
    MissingField { record: usize, field: &'static str },
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("no verdicts to evaluate")]
    Empty,
    #[error("runs cover different items: {only_a} only in the first, {only_b} only in the second")]
    MismatchedItems { only_a: usize, only_b: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    question: Option<String>,
    options: Option<BTreeMap<String, String>>,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    level: Option<String>,
}

/// Reads line-delimited records `{id, question, options, answer, level}`.
/// With `labeled`, every record must carry an answer.
pub fn load_dataset(reader: impl BufRead, labeled: bool) -> Result<Vec<McqItem>, EvalError> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    let mut record = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        record += 1;
        let bad = |message: String| EvalError::Record { record, message };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let id = match raw.id.ok_or(EvalError::MissingField { record, field: "id" })? {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(bad(format!("id must be a string or number, got {other}"))),
        };
        let question = raw.question.ok_or(EvalError::MissingField { record, field: "question" })?;
        let options = raw
            .options
            .ok_or(EvalError::MissingField { record, field: "options" })?
            .into_iter()
            .map(|(k, v)| Ok((k.trim().parse::<Letter>().map_err(|e| bad(e.to_string()))?, v)))
            .collect::<Result<BTreeMap<_, _>, EvalError>>()?;
        let gold = match raw.answer.as_deref().map(str::trim).filter(|a| !a.is_empty()) {
            Some(a) => Some(a.parse::<Letter>().map_err(|e| bad(e.to_string()))?),
            None if labeled => return Err(EvalError::MissingField { record, field: "answer" }),
            None => None,
        };
        let difficulty = match raw.level.as_deref().map(str::trim).filter(|l| !l.is_empty()) {
            Some(l) => Some(l.parse::<Difficulty>().map_err(bad)?),
            None => None,
        };
        let item = McqItem {
            id,
            question,
            options,
            gold,
            difficulty,
        };
        item.validate().map_err(bad)?;
        if !seen.insert(item.id.clone()) {
            return Err(EvalError::DuplicateId(item.id));
        }
        items.push(item);
    }
    Ok(items)
}

/// Report bucket: one per difficulty level plus one for unlabeled items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Beginner,
    Intermediate,
    Advanced,
    Unspecified,
}

impl Bucket {
    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Beginner => "beginner",
            Bucket::Intermediate => "intermediate",
            Bucket::Advanced => "advanced",
            Bucket::Unspecified => "unspecified",
        }
    }
}

impl From<Option<Difficulty>> for Bucket {
    fn from(d: Option<Difficulty>) -> Self {
        match d {
            Some(Difficulty::Beginner) => Bucket::Beginner,
            Some(Difficulty::Intermediate) => Bucket::Intermediate,
            Some(Difficulty::Advanced) => Bucket::Advanced,
            None => Bucket::Unspecified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub item_id: String,
    /// `None` marks an invalid (unparseable) answer.
    pub predicted: Option<Letter>,
    pub gold: Letter,
    pub correct: bool,
    pub difficulty: Option<Difficulty>,
}

impl Verdict {
    pub fn new(item_id: impl Into<String>, predicted: Option<Letter>, gold: Letter, difficulty: Option<Difficulty>) -> Self {
        Self {
            item_id: item_id.into(),
            predicted,
            gold,
            correct: predicted == Some(gold),
            difficulty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl BucketStats {
    fn from_counts(count: usize, correct: usize) -> Self {
        Self {
            count,
            correct,
            accuracy: correct as f64 / count as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Only buckets that occur in the data.
    pub buckets: BTreeMap<Bucket, BucketStats>,
    pub invalid: usize,
    pub config_digest: String,
    /// Sorted by item id.
    pub verdicts: Vec<Verdict>,
}

/// Hex SHA-256 of the JSON form of `config`.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn evaluate(mut verdicts: Vec<Verdict>, config_digest: impl Into<String>) -> Result<EvalReport, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::Empty);
    }
    verdicts.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    if let Some(w) = verdicts.windows(2).find(|w| w[0].item_id == w[1].item_id) {
        return Err(EvalError::DuplicateId(w[0].item_id.clone()));
    }
    let mut counts: BTreeMap<Bucket, (usize, usize)> = BTreeMap::new();
    for v in &verdicts {
        let e = counts.entry(v.difficulty.into()).or_default();
        e.0 += 1;
        e.1 += usize::from(v.correct);
    }
    let total = verdicts.len();
    let correct = verdicts.iter().filter(|v| v.correct).count();
    Ok(EvalReport {
        total,
        correct,
        accuracy: correct as f64 / total as f64,
        buckets: counts
            .into_iter()
            .map(|(b, (n, c))| (b, BucketStats::from_counts(n, c)))
            .collect(),
        invalid: verdicts.iter().filter(|v| v.predicted.is_none()).count(),
        config_digest: config_digest.into(),
        verdicts,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

impl EvalReport {
    /// Fixed-width table: one row per bucket, then the overall row.
    pub fn render_text(&self) -> String {
        let mut out = format!("{:<14}{:>8}{:>9}{:>10}\n", "level", "items", "correct", "accuracy");
        for (b, s) in &self.buckets {
            let _ = writeln!(out, "{:<14}{:>8}{:>9}{:>10}", b.as_str(), s.count, s.correct, pct(s.accuracy));
        }
        let _ = writeln!(out, "{:<14}{:>8}{:>9}{:>10}", "overall", self.total, self.correct, pct(self.accuracy));
        let _ = writeln!(out, "invalid answers: {}", self.invalid);
        let _ = writeln!(out, "config digest: {}", self.config_digest);
        out
    }

    pub fn item_ids(&self) -> BTreeSet<&str> {
        self.verdicts.iter().map(|v| v.item_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    /// Second run minus first run, as fractions.
    pub overall_delta: f64,
    pub bucket_deltas: BTreeMap<Bucket, f64>,
    /// Wrong in the first run, right in the second.
    pub gained: Vec<String>,
    /// Right in the first run, wrong in the second.
    pub lost: Vec<String>,
}

pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<RunComparison, EvalError> {
    let (ia, ib) = (a.item_ids(), b.item_ids());
    if ia != ib {
        return Err(EvalError::MismatchedItems {
            only_a: ia.difference(&ib).count(),
            only_b: ib.difference(&ia).count(),
        });
    }
    let mut gained = Vec::new();
    let mut lost = Vec::new();
    // Both verdict lists are sorted by id over the same id set.
    for (va, vb) in a.verdicts.iter().zip(&b.verdicts) {
        match (va.correct, vb.correct) {
            (false, true) => gained.push(va.item_id.clone()),
            (true, false) => lost.push(va.item_id.clone()),
            _ => {}
        }
    }
    let buckets: BTreeSet<Bucket> = a.buckets.keys().chain(b.buckets.keys()).copied().collect();
    let acc = |r: &EvalReport, k: &Bucket| r.buckets.get(k).map_or(0.0, |s| s.accuracy);
    Ok(RunComparison {
        overall_delta: b.accuracy - a.accuracy,
        bucket_deltas: buckets.iter().map(|k| (*k, acc(b, k) - acc(a, k))).collect(),
        gained,
        lost,
    })
}

impl RunComparison {
    pub fn render_text(&self, a: &EvalReport, b: &EvalReport) -> String {
        let mut out = format!("{:<14}{:>10}{:>10}{:>10}\n", "level", "first", "second", "delta");
        let acc = |r: &EvalReport, k: &Bucket| r.buckets.get(k).map_or(0.0, |s| s.accuracy);
        for (k, d) in &self.bucket_deltas {
            let _ = writeln!(out, "{:<14}{:>10}{:>10}{:>10}", k.as_str(), pct(acc(a, k)), pct(acc(b, k)), points(*d));
        }
        let _ = writeln!(out, "{:<14}{:>10}{:>10}{:>10}", "overall", pct(a.accuracy), pct(b.accuracy), points(self.overall_delta));
        let _ = writeln!(out, "gained ({}): {}", self.gained.len(), self.gained.join(" "));
        let _ = writeln!(out, "lost ({}): {}", self.lost.len(), self.lost.join(" "));
        out
    }
}

/// Accuracy difference in percentage points, one decimal.
pub fn points(delta: f64) -> String {
    format!("{:+.1}", delta * 100.0)
}

/// Splits off few-shot examples and drops them from the evaluation set.
pub fn exclude_examples(items: Vec<McqItem>, examples: &[FewShotExample]) -> Vec<McqItem> {
    let ids: HashSet<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    items.into_iter().filter(|i| !ids.contains(i.id.as_str())).collect()
}

/// Results of running the pipeline over a dataset.
#[derive(Debug)]
pub struct RunOutput {
    /// In item order.
    pub traces: Vec<ItemTrace>,
    pub verdicts: Vec<Verdict>,
    /// Items the harness could not process.
    pub failures: Vec<(String, PipelineError)>,
}

/// Runs `pipeline` over labeled `items` with at most `jobs` in flight.
pub fn run_items(pipeline: &Pipeline<'_>, items: &[McqItem], jobs: usize) -> RunOutput {
    let work = || -> Vec<_> { items.par_iter().map(|it| (it, pipeline.run(it))).collect() };
    let results = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    };
    let mut out = RunOutput {
        traces: Vec::new(),
        verdicts: Vec::new(),
        failures: Vec::new(),
    };
    for (item, res) in results {
        match (res, item.gold) {
            (Ok(o), Some(gold)) => {
                out.verdicts.push(Verdict::new(&item.id, o.predicted, gold, item.difficulty));
                out.traces.push(o.trace);
            }
            (Ok(o), None) => out.traces.push(o.trace),
            (Err(e), _) => out.failures.push((item.id.clone(), e)),
        }
    }
    out
}
