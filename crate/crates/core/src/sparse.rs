//! Okapi BM25 over fully normalized tokens (stage 1 of the cascade).
//!
//! IDF uses the non-negative smoothed form `ln((N - df + 0.5) / (df + 0.5) + 1)`,
//! so every matching document scores strictly above zero and documents with
//! no query term score exactly zero (and are never returned).

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::passage::{top_ranked, RankedPassage, Stage};

pub const INDEX_FORMAT: &str = "hybridrag-bm25";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SparseError {
    #[error("cannot index an empty corpus (no chunk has any token)")]
    EmptyCorpus,
    #[error("invalid BM25 parameters k1={k1} b={b}")]
    Params { k1: f64, b: f64 },
    #[error("unknown chunk id {0}")]
    UnknownChunk(String),
    #[error("duplicate chunk id {0}")]
    DuplicateId(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("index store line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), SparseError> {
        if self.k1 > 0.0 && self.k1.is_finite() && (0.0..=1.0).contains(&self.b) {
            Ok(())
        } else {
            Err(SparseError::Params {
                k1: self.k1,
                b: self.b,
            })
        }
    }
}

/// Smoothed BM25 inverse document frequency.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Inverted index. Documents are held in ascending id order so that a
/// document's position doubles as its tie-break rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_doc_len: f64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    /// Indexes the `full` token lists of `chunks`.
    pub fn build(chunks: &[Chunk], params: Bm25Params) -> Result<Self, SparseError> {
        Self::from_documents(
            chunks.iter().map(|c| (c.id.as_str(), c.full.as_slice())),
            params,
        )
    }

    pub fn from_documents<'a, I, T>(docs: I, params: Bm25Params) -> Result<Self, SparseError>
    where
        I: IntoIterator<Item = (&'a str, &'a [T])>,
        T: AsRef<str> + Sync + 'a,
    {
        params.validate()?;
        let mut docs: Vec<(&str, &[T])> = docs.into_iter().collect();
        docs.sort_by(|a, b| a.0.cmp(b.0));
        if let Some(w) = docs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(SparseError::DuplicateId(w[0].0.to_owned()));
        }
        let total: usize = docs.iter().map(|d| d.1.len()).sum();
        if total == 0 {
            return Err(SparseError::EmptyCorpus);
        }

        let counts: Vec<BTreeMap<&str, u32>> = docs
            .par_iter()
            .map(|(_, toks)| {
                let mut tf = BTreeMap::new();
                for t in toks.iter() {
                    *tf.entry(t.as_ref()).or_insert(0) += 1;
                }
                tf
            })
            .collect();

        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (doc, tf) in counts.into_iter().enumerate() {
            for (term, n) in tf {
                postings.entry(term.to_owned()).or_default().push((doc as u32, n));
            }
        }
        let doc_len: Vec<u32> = docs.iter().map(|d| d.1.len() as u32).collect();
        Ok(Self {
            params,
            avg_doc_len: total as f64 / docs.len() as f64,
            doc_ids: docs.into_iter().map(|d| d.0.to_owned()).collect(),
            doc_len,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_len(&self, chunk_id: &str) -> Option<usize> {
        self.position(chunk_id).map(|i| self.doc_len[i] as usize)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `(chunk id, term frequency)` pairs in ascending id order.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|p| p.iter().map(|&(d, tf)| (self.doc_ids[d as usize].as_str(), tf)).collect())
            .unwrap_or_default()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    fn position(&self, chunk_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|id| id.as_str().cmp(chunk_id)).ok()
    }

    fn term_weight(&self, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm = 1.0 - b + b * f64::from(doc_len) / self.avg_doc_len;
        tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one chunk; each query token occurrence contributes.
    pub fn score<T: AsRef<str>>(&self, query: &[T], chunk_id: &str) -> Result<f64, SparseError> {
        let doc = self
            .position(chunk_id)
            .ok_or_else(|| SparseError::UnknownChunk(chunk_id.to_owned()))? as u32;
        let n = self.doc_count();
        let mut score = 0.0;
        for t in query {
            let Some(list) = self.postings.get(t.as_ref()) else {
                continue;
            };
            if let Ok(i) = list.binary_search_by_key(&doc, |&(d, _)| d) {
                score += idf(n, list.len()) * self.term_weight(list[i].1, self.doc_len[doc as usize]);
            }
        }
        Ok(score)
    }

    /// Top-`n` chunks by BM25, zero scores excluded, ties by ascending id.
    pub fn retrieve<T: AsRef<str>>(&self, query: &[T], n: usize) -> Vec<RankedPassage> {
        let docs = self.doc_count();
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for t in query {
            let Some(list) = self.postings.get(t.as_ref()) else {
                continue;
            };
            let w = idf(docs, list.len());
            for &(d, tf) in list {
                *acc.entry(d).or_insert(0.0) += w * self.term_weight(tf, self.doc_len[d as usize]);
            }
        }
        let scored = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(d, s)| (self.doc_ids[d as usize].clone(), s))
            .collect();
        top_ranked(scored, n, Stage::Sparse)
    }

    pub fn save(&self, mut out: impl Write) -> Result<(), SparseError> {
        let header = IndexHeader {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            k1: self.params.k1,
            b: self.params.b,
            doc_count: self.doc_count(),
            avg_doc_len: self.avg_doc_len,
        };
        write_json_line(&mut out, &header)?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_len) {
            write_json_line(&mut out, &Line::Doc { id: id.clone(), len: *len })?;
        }
        for (term, list) in &self.postings {
            let postings = list
                .iter()
                .map(|&(d, tf)| (self.doc_ids[d as usize].clone(), tf))
                .collect();
            write_json_line(
                &mut out,
                &Line::Term {
                    term: term.clone(),
                    postings,
                },
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(input: impl BufRead) -> Result<Self, SparseError> {
        let corrupt = |line: usize, message: String| SparseError::Corrupt { line, message };
        let mut lines = input.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| corrupt(1, "missing header".into()))?;
        let header: IndexHeader = serde_json::from_str(&first?).map_err(|e| corrupt(1, e.to_string()))?;
        if header.format != INDEX_FORMAT {
            return Err(corrupt(1, format!("not a {INDEX_FORMAT} store")));
        }
        if header.version != INDEX_VERSION {
            return Err(corrupt(1, format!("unsupported version {}", header.version)));
        }
        let params = Bm25Params {
            k1: header.k1,
            b: header.b,
        };
        params.validate()?;
        let mut doc_ids = Vec::new();
        let mut doc_len = Vec::new();
        let mut postings = BTreeMap::new();
        let mut pos: HashMap<String, u32> = HashMap::new();
        for (idx, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| corrupt(idx + 1, e.to_string()))? {
                Line::Doc { id, len } => {
                    if doc_ids.last().is_some_and(|last: &String| *last >= id) || !postings.is_empty() {
                        return Err(corrupt(idx + 1, format!("document {id} out of order")));
                    }
                    pos.insert(id.clone(), doc_ids.len() as u32);
                    doc_ids.push(id);
                    doc_len.push(len);
                }
                Line::Term { term, postings: list } => {
                    let mut resolved = Vec::with_capacity(list.len());
                    for (id, tf) in list {
                        let d = *pos
                            .get(&id)
                            .ok_or_else(|| corrupt(idx + 1, format!("posting for unknown document {id}")))?;
                        resolved.push((d, tf));
                    }
                    postings.insert(term, resolved);
                }
            }
        }
        if doc_ids.len() != header.doc_count {
            return Err(corrupt(0, format!(
                "header declares {} documents, found {}",
                header.doc_count,
                doc_ids.len()
            )));
        }
        let total: u64 = doc_len.iter().map(|&l| u64::from(l)).sum();
        if total == 0 {
            return Err(SparseError::EmptyCorpus);
        }
        Ok(Self {
            params,
            avg_doc_len: total as f64 / doc_ids.len() as f64,
            doc_ids,
            doc_len,
            postings,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    k1: f64,
    b: f64,
    doc_count: usize,
    avg_doc_len: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Doc { id: String, len: u32 },
    Term { term: String, postings: Vec<(String, u32)> },
}

fn write_json_line<T: Serialize>(out: &mut impl Write, value: &T) -> Result<(), SparseError> {
    serde_json::to_writer(&mut *out, value).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}
