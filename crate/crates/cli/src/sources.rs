//! Turning source files into chunks.

use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hybridrag_core::corpus::{chunk_paragraphs, extract_paragraphs, ingest_fatwas, read_fatwas, Chunk, ChunkConfig, DocFormat};
use hybridrag_core::textnorm::Normalizer;

/// Expands directories (recursively) and returns files in sorted order.
pub fn collect_sources(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack: Vec<PathBuf> = inputs.to_vec();
    while let Some(p) = stack.pop() {
        let meta = std::fs::metadata(&p).with_context(|| format!("reading {}", p.display()))?;
        if meta.is_dir() {
            for entry in std::fs::read_dir(&p)? {
                stack.push(entry?.path());
            }
        } else if kind(&p).is_some() {
            out.push(p);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Fatwas,
    Html,
    Xml,
    Docx,
    Text,
}

fn kind(path: &Path) -> Option<Kind> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    Some(match ext.as_str() {
        "jsonl" => Kind::Fatwas,
        "html" | "htm" => Kind::Html,
        "xml" => Kind::Xml,
        "docx" => Kind::Docx,
        "txt" => Kind::Text,
        _ => return None,
    })
}

/// Chunks from one source, plus per-record problems that did not stop it.
pub struct SourceChunks {
    pub source_id: String,
    pub chunks: Vec<Chunk>,
    pub warnings: Vec<String>,
}

pub fn source_id(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn chunk_source(path: &Path, cfg: &ChunkConfig, normalizer: &Normalizer) -> Result<SourceChunks> {
    let id = source_id(path);
    let Some(kind) = kind(path) else {
        bail!("unsupported file type");
    };
    if kind == Kind::Fatwas {
        let file = std::fs::File::open(path)?;
        let records = read_fatwas(std::io::BufReader::new(file))?;
        let ingest = ingest_fatwas(&id, &records, normalizer);
        return Ok(SourceChunks {
            source_id: id,
            chunks: ingest.chunks,
            warnings: ingest
                .errors
                .iter()
                .map(|e| format!("record {}: {}", e.index, e.message))
                .collect(),
        });
    }
    let (bytes, format) = match kind {
        Kind::Html => (std::fs::read(path)?, DocFormat::Html),
        Kind::Xml => (std::fs::read(path)?, DocFormat::DocxXml),
        Kind::Text => (std::fs::read(path)?, DocFormat::Plain),
        Kind::Docx => (docx_body(path)?, DocFormat::DocxXml),
        Kind::Fatwas => unreachable!(),
    };
    let paragraphs = extract_paragraphs(&bytes, format)?;
    Ok(SourceChunks {
        chunks: chunk_paragraphs(&id, &paragraphs, cfg, normalizer)?,
        source_id: id,
        warnings: Vec::new(),
    })
}

fn docx_body(path: &Path) -> Result<Vec<u8>> {
    let file = std::fs::File::open(path)?;
    let mut archive = zip::ZipArchive::new(file).context("not a zip archive")?;
    let mut entry = archive.by_name("word/document.xml").context("archive has no word/document.xml")?;
    let mut buf = Vec::new();
    entry.read_to_end(&mut buf)?;
    Ok(buf)
}
