//! Line-delimited chunk store: one JSON header line, then one chunk per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Chunk, ChunkConfig, CorpusError};

pub const KB_FORMAT: &str = "hybridrag-kb";
pub const KB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbHeader {
    pub format: String,
    pub version: u32,
    pub chunk_config: ChunkConfig,
    pub chunk_count: usize,
}

impl KbHeader {
    pub fn new(chunk_config: ChunkConfig, chunk_count: usize) -> Self {
        Self {
            format: KB_FORMAT.into(),
            version: KB_VERSION,
            chunk_config,
            chunk_count,
        }
    }
}

pub fn save_kb(mut out: impl Write, chunks: &[Chunk], cfg: &ChunkConfig) -> Result<(), CorpusError> {
    let header = KbHeader::new(*cfg, chunks.len());
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for c in chunks {
        serde_json::to_writer(&mut out, c).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_kb(input: impl BufRead) -> Result<(KbHeader, Vec<Chunk>), CorpusError> {
    let mut lines = input.lines();
    let first = lines.next().transpose()?.ok_or(CorpusError::Corrupt {
        line: 1,
        message: "missing header".into(),
    })?;
    let probe: serde_json::Value = serde_json::from_str(&first).map_err(|e| CorpusError::Corrupt {
        line: 1,
        message: e.to_string(),
    })?;
    if probe.get("format").and_then(|f| f.as_str()) != Some(KB_FORMAT) {
        return Err(CorpusError::Corrupt {
            line: 1,
            message: format!("not a {KB_FORMAT} store"),
        });
    }
    let found = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if found != u64::from(KB_VERSION) {
        return Err(CorpusError::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: KB_VERSION,
        });
    }
    let header: KbHeader = serde_json::from_value(probe).map_err(|e| CorpusError::Corrupt {
        line: 1,
        message: e.to_string(),
    })?;
    let mut chunks = Vec::with_capacity(header.chunk_count);
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let chunk = serde_json::from_str(&line).map_err(|e| CorpusError::Corrupt {
            line: idx + 2,
            message: e.to_string(),
        })?;
        chunks.push(chunk);
    }
    if chunks.len() != header.chunk_count {
        return Err(CorpusError::Corrupt {
            line: chunks.len() + 1,
            message: format!("header declares {} chunks, found {}", header.chunk_count, chunks.len()),
        });
    }
    Ok((header, chunks))
}
