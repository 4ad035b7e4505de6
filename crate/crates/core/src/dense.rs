//! Stage 2: embedding cosine over the sparse candidates.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use fnv::FnvHasher;
use sha2::{Digest, Sha256};

use crate::corpus::Chunk;
use crate::passage::{top_ranked, RankedPassage, Stage};
use crate::provider::{ProviderError, RetryPolicy};

pub const DEFAULT_DIMENSION: usize = 768;
pub const DEFAULT_BATCH_SIZE: usize = 8;

const CACHE_MAGIC: &[u8; 4] = b"HRVC";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DenseError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cosine undefined for a zero vector")]
    ZeroVector,
    #[error("vector for chunk {0} has zero norm")]
    ZeroVectorFor(String),
    #[error("non-finite embedding component")]
    NonFinite,
    #[error("no vector for chunk {0}")]
    MissingVector(String),
    #[error("embedding batch {batch} ({first}..{last}) failed after {attempts} attempts: {source}")]
    BatchFailed {
        batch: usize,
        first: String,
        last: String,
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("provider returned {found} vectors for {expected} texts")]
    CountMismatch { expected: usize, found: usize },
    #[error("cache belongs to provider {cache}/{cache_dim}, not {provider}/{provider_dim}")]
    CacheMismatch {
        cache: String,
        cache_dim: usize,
        provider: String,
        provider_dim: usize,
    },
    #[error("corrupt vector cache: {0}")]
    CorruptCache(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("query embedding failed: {0}")]
    Query(#[source] ProviderError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, DenseError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DenseError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, DenseError> {
    if a.dimension() != b.dimension() {
        return Err(DenseError::DimensionMismatch {
            expected: a.dimension(),
            found: b.dimension(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.0.iter().zip(&b.0) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(DenseError::ZeroVector);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Something that turns texts into fixed-dimension vectors, one per text.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier recorded in the vector cache header.
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

/// Deterministic offline embedder: L2-normalized counts of hashed character
/// trigrams (text padded with one space on each side).
#[derive(Debug, Clone)]
pub struct HashedTrigramEmbedder {
    dimension: usize,
    id: String,
}

impl Default for HashedTrigramEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl HashedTrigramEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self {
            dimension,
            id: format!("hashed-trigram-{dimension}"),
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(text.chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut v = vec![0f32; self.dimension];
        let mut buf = [0u8; 12];
        for w in padded.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let mut h = FnvHasher::default();
            h.write(&buf[..len]);
            v[(h.finish() % self.dimension as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for HashedTrigramEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

pub type ContentHash = [u8; 32];

pub fn content_hash(text: &str) -> ContentHash {
    Sha256::digest(text.as_bytes()).into()
}

/// Vectors keyed by the hash of the text they embed, for one provider.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    provider_id: String,
    dimension: usize,
    entries: BTreeMap<ContentHash, (String, EmbeddingVector)>,
}

impl EmbeddingCache {
    pub fn new(provider_id: impl Into<String>, dimension: usize) -> Self {
        Self {
            provider_id: provider_id.into(),
            dimension,
            entries: BTreeMap::new(),
        }
    }

    pub fn for_provider(provider: &dyn EmbeddingProvider) -> Self {
        Self::new(provider.id(), provider.dimension())
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, hash: &ContentHash) -> Option<&EmbeddingVector> {
        self.entries.get(hash).map(|(_, v)| v)
    }

    pub fn insert(&mut self, hash: ContentHash, chunk_id: String, v: EmbeddingVector) {
        self.entries.entry(hash).or_insert((chunk_id, v));
    }

    /// Keeps only entries whose hash is in `live`.
    pub fn retain_hashes(&mut self, live: &std::collections::HashSet<ContentHash>) {
        self.entries.retain(|h, _| live.contains(h));
    }

    pub fn save(&self, mut out: impl Write) -> Result<(), DenseError> {
        out.write_all(CACHE_MAGIC)?;
        out.write_u32::<LittleEndian>(CACHE_VERSION)?;
        write_str(&mut out, &self.provider_id)?;
        out.write_u32::<LittleEndian>(self.dimension as u32)?;
        out.write_u64::<LittleEndian>(self.entries.len() as u64)?;
        for (hash, (chunk_id, v)) in &self.entries {
            out.write_all(hash)?;
            write_str(&mut out, chunk_id)?;
            for &x in v.values() {
                out.write_f32::<LittleEndian>(x)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(mut input: impl Read) -> Result<Self, DenseError> {
        let corrupt = |m: &str| DenseError::CorruptCache(m.to_owned());
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != CACHE_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != CACHE_VERSION {
            return Err(DenseError::CorruptCache(format!("unsupported version {version}")));
        }
        let provider_id = read_str(&mut input)?;
        let dimension = input.read_u32::<LittleEndian>()? as usize;
        let count = input.read_u64::<LittleEndian>()?;
        let mut cache = Self::new(provider_id, dimension);
        for _ in 0..count {
            let mut hash = [0u8; 32];
            input.read_exact(&mut hash).map_err(|_| corrupt("truncated record"))?;
            let chunk_id = read_str(&mut input)?;
            let mut values = vec![0f32; dimension];
            input
                .read_f32_into::<LittleEndian>(&mut values)
                .map_err(|_| corrupt("truncated vector"))?;
            cache.entries.insert(hash, (chunk_id, EmbeddingVector::new(values)?));
        }
        Ok(cache)
    }
}

fn write_str(out: &mut impl Write, s: &str) -> std::io::Result<()> {
    out.write_u32::<LittleEndian>(s.len() as u32)?;
    out.write_all(s.as_bytes())
}

fn read_str(input: &mut impl Read) -> Result<String, DenseError> {
    let len = input.read_u32::<LittleEndian>()? as usize;
    if len > 1 << 20 {
        return Err(DenseError::CorruptCache("implausible string length".into()));
    }
    let mut buf = vec![0u8; len];
    input
        .read_exact(&mut buf)
        .map_err(|_| DenseError::CorruptCache("truncated string".into()))?;
    String::from_utf8(buf).map_err(|_| DenseError::CorruptCache("invalid UTF-8".into()))
}

#[derive(Debug, Clone, Copy)]
pub struct EmbedOptions {
    pub batch_size: usize,
    pub retry: RetryPolicy,
    /// Batches in flight at once.
    pub jobs: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            retry: RetryPolicy::default(),
            jobs: 1,
        }
    }
}

/// Chunk id to vector.
pub type VectorStore = HashMap<String, EmbeddingVector>;

/// Embeds every chunk's light text, calling the provider only for texts
/// missing from `cache`. Batches that complete are kept in the cache even if
/// a later batch fails.
pub fn embed_corpus(
    provider: &dyn EmbeddingProvider,
    chunks: &[Chunk],
    cache: &mut EmbeddingCache,
    opts: &EmbedOptions,
) -> Result<VectorStore, DenseError> {
    if cache.provider_id() != provider.id() || cache.dimension() != provider.dimension() {
        return Err(DenseError::CacheMismatch {
            cache: cache.provider_id().to_owned(),
            cache_dim: cache.dimension(),
            provider: provider.id().to_owned(),
            provider_dim: provider.dimension(),
        });
    }
    let hashes: Vec<ContentHash> = chunks.iter().map(|c| content_hash(c.light.as_str())).collect();
    let mut seen = std::collections::HashSet::new();
    let missing: Vec<(ContentHash, &Chunk)> = hashes
        .iter()
        .zip(chunks)
        .filter(|(h, _)| cache.get(h).is_none() && seen.insert(**h))
        .map(|(h, c)| (*h, c))
        .collect();

    let batches: Vec<&[(ContentHash, &Chunk)]> = missing.chunks(opts.batch_size.max(1)).collect();
    let jobs = opts.jobs.max(1);
    for (group_idx, group) in batches.chunks(jobs).enumerate() {
        let results: Vec<Result<Vec<EmbeddingVector>, DenseError>> = std::thread::scope(|s| {
            let handles: Vec<_> = group
                .iter()
                .enumerate()
                .map(|(i, batch)| {
                    let batch_no = group_idx * jobs + i;
                    s.spawn(move || embed_batch(provider, batch_no, batch, &opts.retry))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("embedding worker panicked"))
                .collect()
        });
        let mut first_err = None;
        for (batch, res) in group.iter().zip(results) {
            match res {
                Ok(vectors) => {
                    for ((hash, chunk), v) in batch.iter().zip(vectors) {
                        cache.insert(*hash, chunk.id.clone(), v);
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
    }

    chunks
        .iter()
        .zip(&hashes)
        .map(|(c, h)| {
            let v = cache
                .get(h)
                .cloned()
                .ok_or_else(|| DenseError::MissingVector(c.id.clone()))?;
            Ok((c.id.clone(), v))
        })
        .collect()
}

fn embed_batch(
    provider: &dyn EmbeddingProvider,
    batch_no: usize,
    batch: &[(ContentHash, &Chunk)],
    retry: &RetryPolicy,
) -> Result<Vec<EmbeddingVector>, DenseError> {
    let texts: Vec<String> = batch.iter().map(|(_, c)| c.light.as_str().to_owned()).collect();
    let raw = retry.run(|_| provider.embed(&texts)).map_err(|(source, attempts)| DenseError::BatchFailed {
        batch: batch_no,
        first: batch[0].1.id.clone(),
        last: batch[batch.len() - 1].1.id.clone(),
        attempts,
        source,
    })?;
    validate_vectors(raw, texts.len(), provider.dimension())
}

fn validate_vectors(raw: Vec<Vec<f32>>, expected: usize, dimension: usize) -> Result<Vec<EmbeddingVector>, DenseError> {
    if raw.len() != expected {
        return Err(DenseError::CountMismatch {
            expected,
            found: raw.len(),
        });
    }
    raw.into_iter()
        .map(|v| {
            if v.len() != dimension {
                return Err(DenseError::DimensionMismatch {
                    expected: dimension,
                    found: v.len(),
                });
            }
            EmbeddingVector::new(v)
        })
        .collect()
}

/// Embeds a single query text.
pub fn embed_query(provider: &dyn EmbeddingProvider, text: &str, retry: &RetryPolicy) -> Result<EmbeddingVector, DenseError> {
    let texts = [text.to_owned()];
    let raw = retry.run(|_| provider.embed(&texts)).map_err(|(e, _)| DenseError::Query(e))?;
    Ok(validate_vectors(raw, 1, provider.dimension())?.remove(0))
}

/// Top-`m` of `candidates` by cosine to `query`, ties by ascending chunk id.
pub fn retrieve_dense(
    query: &EmbeddingVector,
    candidates: &[RankedPassage],
    vectors: &VectorStore,
    m: usize,
) -> Result<Vec<RankedPassage>, DenseError> {
    let scored = candidates
        .iter()
        .map(|c| {
            let v = vectors
                .get(&c.chunk_id)
                .ok_or_else(|| DenseError::MissingVector(c.chunk_id.clone()))?;
            let s = cosine(query, v).map_err(|e| match e {
                DenseError::ZeroVector if v.norm() == 0.0 => DenseError::ZeroVectorFor(c.chunk_id.clone()),
                other => other,
            })?;
            Ok((c.chunk_id.clone(), s))
        })
        .collect::<Result<Vec<_>, DenseError>>()?;
    Ok(top_ranked(scored, m, Stage::Dense))
}
