//! Knowledge-base construction.
//!
//! Fatwas become one retrieval unit each. Book text is chunked paragraph-wise
//! with a token overlap between consecutive chunks. Every [`Chunk`] carries
//! its original text together with the light and full normalized forms.

mod extract;
mod store;

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::textnorm::{NormalizedText, Normalizer, TokenList};

pub use extract::{extract_paragraphs, DocFormat, ExtractError};
pub use store::{load_kb, save_kb, KbHeader, KB_FORMAT, KB_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid chunk config: {0}")]
    Config(String),
    #[error("duplicate chunk id {0}")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported knowledge-base version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt knowledge-base store at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// One retrieval unit in all three representations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub source_id: String,
    pub seq: u32,
    pub original: String,
    pub light: NormalizedText,
    pub full: TokenList,
    /// Whitespace tokens of `light`.
    pub token_count: usize,
    /// Non-indexed fields (fatwa category and metadata).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Chunk {
    /// Builds a chunk from original text, deriving both normalized forms.
    pub fn from_original(source_id: &str, seq: u32, original: String, normalizer: &Normalizer) -> Self {
        let light = normalizer.normalize_light(&original);
        let full = normalizer.full_from_light(&light);
        Self {
            id: chunk_id(source_id, seq),
            source_id: source_id.to_owned(),
            seq,
            token_count: light.word_count(),
            original,
            light,
            full,
            meta: BTreeMap::new(),
        }
    }
}

pub fn chunk_id(source_id: &str, seq: u32) -> String {
    format!("{source_id}:{seq}")
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FatwaRecord {
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub answer: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// Reads one JSON fatwa object per line; blank lines are skipped.
pub fn read_fatwas(reader: impl BufRead) -> Result<Vec<FatwaRecord>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// A fatwa that could not be ingested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct FatwaIngest {
    pub chunks: Vec<Chunk>,
    pub errors: Vec<RecordError>,
}

/// One chunk per record with source id `<source>#<index>`. Records with an
/// empty question or answer are reported and skipped.
pub fn ingest_fatwas(source: &str, records: &[FatwaRecord], normalizer: &Normalizer) -> FatwaIngest {
    let mut out = FatwaIngest::default();
    for (index, rec) in records.iter().enumerate() {
        let question = rec.question.trim();
        let answer = rec.answer.trim();
        let missing = match (question.is_empty(), answer.is_empty()) {
            (true, true) => Some("empty question and answer"),
            (true, false) => Some("empty question"),
            (false, true) => Some("empty answer"),
            _ => None,
        };
        if let Some(message) = missing {
            out.errors.push(RecordError {
                index,
                message: message.into(),
            });
            continue;
        }
        let source_id = format!("{source}#{index}");
        let mut chunk = Chunk::from_original(&source_id, 0, format!("{question}\n\n{answer}"), normalizer);
        if !rec.category.is_empty() {
            chunk.meta.insert("category".into(), rec.category.clone());
        }
        for (k, v) in &rec.metadata {
            chunk.meta.entry(k.clone()).or_insert_with(|| v.clone());
        }
        out.chunks.push(chunk);
    }
    out
}

/// Chunk sizes in light-text whitespace tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub target_tokens: usize,
    pub overlap_tokens: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            target_tokens: 200,
            overlap_tokens: 20,
            min_tokens: 50,
            max_tokens: 400,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let ok = self.min_tokens > 0
            && self.overlap_tokens < self.min_tokens
            && self.min_tokens <= self.target_tokens
            && self.target_tokens <= self.max_tokens;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::Config(format!(
                "need overlap < min <= target <= max and min > 0, got {self:?}"
            )))
        }
    }
}

/// Plans token windows over a source whose paragraphs end at `para_ends`
/// (cumulative token offsets, strictly increasing).
///
/// Whole paragraphs are accumulated while the chunk stays within
/// `max_tokens`; the chunk closes once it reaches `target_tokens`. A
/// paragraph that does not fit is cut into `target_tokens` windows. Each
/// chunk after the first starts with the last `overlap_tokens` of its
/// predecessor. A short tail is merged into the previous window, or widened
/// to `min_tokens` when merging would exceed `max_tokens`.
pub fn plan_windows(para_ends: &[usize], cfg: &ChunkConfig) -> Vec<Range<usize>> {
    let Some(&len) = para_ends.last() else {
        return Vec::new();
    };
    if len == 0 {
        return Vec::new();
    }
    let mut out: Vec<Range<usize>> = Vec::new();
    let (mut start, mut body) = (0usize, 0usize);
    loop {
        let mut end = body;
        for &b in para_ends.iter().filter(|&&b| b > body) {
            if b - start > cfg.max_tokens {
                break;
            }
            end = b;
            if end - start >= cfg.target_tokens {
                break;
            }
        }
        if end > body && (end - start >= cfg.min_tokens || end == len) {
            out.push(start..end);
        } else {
            let stop = *para_ends
                .iter()
                .find(|&&b| b > end)
                .expect("a paragraph follows an unfinished chunk");
            out.extend(split_region(start, stop, cfg));
            end = stop;
        }
        if end == len {
            break;
        }
        start = end - cfg.overlap_tokens;
        body = end;
    }
    fix_short_tail(&mut out, cfg);
    out
}

fn split_region(start: usize, stop: usize, cfg: &ChunkConfig) -> Vec<Range<usize>> {
    let mut windows = Vec::new();
    let mut ws = start;
    loop {
        let we = (ws + cfg.target_tokens).min(stop);
        windows.push(ws..we);
        if we == stop {
            break;
        }
        ws = we - cfg.overlap_tokens;
    }
    fix_short_tail(&mut windows, cfg);
    windows
}

fn fix_short_tail(windows: &mut Vec<Range<usize>>, cfg: &ChunkConfig) {
    let n = windows.len();
    if n < 2 || windows[n - 1].len() >= cfg.min_tokens {
        return;
    }
    let last = windows[n - 1].clone();
    if last.end - windows[n - 2].start <= cfg.max_tokens {
        windows[n - 2].end = last.end;
        windows.pop();
    } else {
        windows[n - 1].start = last.end - cfg.min_tokens;
    }
}

/// Chunks one source's paragraphs (in document order).
///
/// Chunk `original` text is cut from the paragraphs at light-token
/// boundaries, keeping trailing marks and citations with the preceding
/// token; pieces from different paragraphs are joined by a blank line.
pub fn chunk_paragraphs(
    source_id: &str,
    paragraphs: &[String],
    cfg: &ChunkConfig,
    normalizer: &Normalizer,
) -> Result<Vec<Chunk>, CorpusError> {
    cfg.validate()?;
    struct Para<'a> {
        text: &'a str,
        spans: Vec<Range<usize>>,
        first: usize,
    }
    let mut paras = Vec::new();
    let mut ends = Vec::new();
    let mut total = 0usize;
    for text in paragraphs {
        let spans: Vec<_> = normalizer
            .light_tokens_aligned(text)
            .into_iter()
            .map(|t| t.span)
            .collect();
        if spans.is_empty() {
            continue;
        }
        let first = total;
        total += spans.len();
        ends.push(total);
        paras.push(Para { text, spans, first });
    }

    let mut chunks = Vec::new();
    for (seq, window) in plan_windows(&ends, cfg).into_iter().enumerate() {
        let mut pieces = Vec::new();
        for p in &paras {
            let (p_start, p_end) = (p.first, p.first + p.spans.len());
            let (a, b) = (window.start.max(p_start), window.end.min(p_end));
            if a >= b {
                continue;
            }
            let (la, lb) = (a - p_start, b - p_start);
            let from = if la == 0 { 0 } else { p.spans[la].start };
            let to = if lb == p.spans.len() {
                p.text.len()
            } else {
                p.spans[lb].start
            };
            pieces.push(p.text[from..to].trim());
        }
        let seq = u32::try_from(seq).map_err(|_| CorpusError::Config("too many chunks in one source".into()))?;
        chunks.push(Chunk::from_original(source_id, seq, pieces.join("\n\n"), normalizer));
    }
    Ok(chunks)
}

/// An immutable set of chunks with id lookup.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    chunks: Vec<Chunk>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn new(chunks: Vec<Chunk>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(chunks.len());
        for (i, c) in chunks.iter().enumerate() {
            if by_id.insert(c.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(c.id.clone()));
            }
        }
        Ok(Self { chunks, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&Chunk> {
        self.by_id.get(id).map(|&i| &self.chunks[i])
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn into_chunks(self) -> Vec<Chunk> {
        self.chunks
    }
}
