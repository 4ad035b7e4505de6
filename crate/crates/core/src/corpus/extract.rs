//! Block-level text extraction from HTML, DOCX main-part XML and plain text.

use std::str::FromStr;

use quick_xml::events::Event;
use quick_xml::Reader;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocFormat {
    Html,
    /// The `word/document.xml` part of a DOCX package.
    DocxXml,
    Plain,
}

impl FromStr for DocFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "html" | "htm" => Ok(Self::Html),
            "docx-xml" | "docx" | "xml" => Ok(Self::DocxXml),
            "plain" | "txt" | "text" => Ok(Self::Plain),
            other => Err(format!("unknown document format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("invalid UTF-8 at byte {offset}")]
    Utf8 { offset: usize },
    #[error("malformed document at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("unclosed <{element}> opened at byte {offset}")]
    Unclosed { element: String, offset: usize },
}

pub fn extract_paragraphs(doc: &[u8], format: DocFormat) -> Result<Vec<String>, ExtractError> {
    match format {
        DocFormat::Plain => plain(as_utf8(doc)?),
        DocFormat::Html => html(as_utf8(doc)?),
        DocFormat::DocxXml => docx_xml(doc),
    }
}

fn as_utf8(doc: &[u8]) -> Result<&str, ExtractError> {
    let text = std::str::from_utf8(doc).map_err(|e| ExtractError::Utf8 {
        offset: e.valid_up_to(),
    })?;
    Ok(text.strip_prefix('\u{feff}').unwrap_or(text))
}

fn plain(text: &str) -> Result<Vec<String>, ExtractError> {
    let mut out = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            flush_lines(&mut block, &mut out);
        } else {
            block.push(line.trim());
        }
    }
    flush_lines(&mut block, &mut out);
    Ok(out)
}

fn flush_lines(block: &mut Vec<&str>, out: &mut Vec<String>) {
    if !block.is_empty() {
        out.push(block.join("\n"));
        block.clear();
    }
}

const BLOCK_TAGS: &[&str] = &[
    "p", "div", "h1", "h2", "h3", "h4", "h5", "h6", "li", "ul", "ol", "dd", "dt", "dl", "td", "th",
    "tr", "table", "blockquote", "pre", "section", "article", "header", "footer", "aside", "nav",
    "main", "figure", "figcaption", "hr", "body", "html", "address", "center",
];

/// Elements whose content is never text.
const SKIP_TAGS: &[&str] = &["script", "style", "head", "noscript", "template", "svg"];

struct HtmlBlocks {
    out: Vec<String>,
    buf: String,
}

impl HtmlBlocks {
    fn push_text(&mut self, raw: &str) {
        let decoded = html_escape::decode_html_entities(raw);
        let mut pending_space = decoded.starts_with(char::is_whitespace);
        for piece in decoded.split_whitespace() {
            if pending_space && !self.buf.is_empty() && !self.buf.ends_with(['\n', ' ']) {
                self.buf.push(' ');
            }
            self.buf.push_str(piece);
            pending_space = true;
        }
        if decoded.ends_with(char::is_whitespace) && !self.buf.is_empty() && !self.buf.ends_with(['\n', ' ']) {
            self.buf.push(' ');
        }
    }

    fn line_break(&mut self) {
        let trimmed = self.buf.trim_end().len();
        self.buf.truncate(trimmed);
        if !self.buf.is_empty() {
            self.buf.push('\n');
        }
    }

    fn flush(&mut self) {
        let text = self
            .buf
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join("\n");
        if !text.is_empty() {
            self.out.push(text);
        }
        self.buf.clear();
    }
}

fn html(text: &str) -> Result<Vec<String>, ExtractError> {
    let bytes = text.as_bytes();
    let mut blocks = HtmlBlocks {
        out: Vec::new(),
        buf: String::new(),
    };
    let mut pos = 0usize;
    while pos < bytes.len() {
        let Some(rel) = text[pos..].find('<') else {
            blocks.push_text(&text[pos..]);
            break;
        };
        let lt = pos + rel;
        blocks.push_text(&text[pos..lt]);
        let rest = &text[lt..];
        if rest.starts_with("<!--") {
            let end = rest.find("-->").ok_or(ExtractError::Malformed {
                offset: lt,
                message: "unterminated comment".into(),
            })?;
            pos = lt + end + 3;
            continue;
        }
        let next = rest[1..].chars().next();
        if !next.is_some_and(|c| c.is_ascii_alphabetic() || matches!(c, '/' | '!' | '?')) {
            // a literal '<' in text
            blocks.push_text("<");
            pos = lt + 1;
            continue;
        }
        let gt = find_tag_end(text, lt)?;
        let tag = Tag::parse(&text[lt + 1..gt]);
        pos = gt + 1;
        let Some(tag) = tag else { continue };
        if SKIP_TAGS.contains(&tag.name.as_str()) && !tag.closing {
            if tag.self_closing {
                continue;
            }
            let close = format!("</{}", tag.name);
            let end = find_ascii_ci(text, pos, &close).ok_or(ExtractError::Unclosed {
                element: tag.name.clone(),
                offset: lt,
            })?;
            let gt = find_tag_end(text, end)?;
            pos = gt + 1;
            if tag.name == "head" {
                blocks.flush();
            }
            continue;
        }
        if tag.name == "br" {
            blocks.line_break();
        } else if BLOCK_TAGS.contains(&tag.name.as_str()) {
            blocks.flush();
        }
    }
    blocks.flush();
    Ok(blocks.out)
}

/// Index of the `>` closing the tag opened at `lt`, honoring quoted attribute values.
fn find_tag_end(text: &str, lt: usize) -> Result<usize, ExtractError> {
    let mut quote: Option<u8> = None;
    for (i, &b) in text.as_bytes()[lt..].iter().enumerate() {
        match (quote, b) {
            (Some(q), _) if b == q => quote = None,
            (Some(_), _) => {}
            (None, b'"' | b'\'') => quote = Some(b),
            (None, b'>') => return Ok(lt + i),
            _ => {}
        }
    }
    Err(ExtractError::Malformed {
        offset: lt,
        message: "unterminated tag".into(),
    })
}

fn find_ascii_ci(text: &str, from: usize, needle: &str) -> Option<usize> {
    let hay = text.as_bytes();
    let n = needle.as_bytes();
    (from..hay.len().saturating_sub(n.len() - 1)).find(|&i| hay[i..i + n.len()].eq_ignore_ascii_case(n))
}

struct Tag {
    name: String,
    closing: bool,
    self_closing: bool,
}

impl Tag {
    /// `None` for declarations and processing instructions.
    fn parse(inner: &str) -> Option<Tag> {
        if inner.starts_with('!') || inner.starts_with('?') {
            return None;
        }
        let (closing, body) = match inner.strip_prefix('/') {
            Some(b) => (true, b),
            None => (false, inner),
        };
        let name: String = body
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | ':'))
            .collect::<String>()
            .to_ascii_lowercase();
        Some(Tag {
            name,
            closing,
            self_closing: inner.trim_end().ends_with('/'),
        })
    }
}

fn docx_xml(doc: &[u8]) -> Result<Vec<String>, ExtractError> {
    let mut reader = Reader::from_reader(doc);
    reader.config_mut().check_end_names = true;
    let mut out = Vec::new();
    let mut para: Option<String> = None;
    let mut in_text = false;
    let mut stack: Vec<(String, usize)> = Vec::new();
    let mut buf = Vec::new();
    loop {
        let offset = reader.buffer_position() as usize;
        let event = reader.read_event_into(&mut buf).map_err(|e| ExtractError::Malformed {
            offset: reader.error_position() as usize,
            message: e.to_string(),
        })?;
        match event {
            Event::Start(e) => {
                let local = e.local_name();
                match local.as_ref() {
                    b"p" => para = Some(String::new()),
                    b"t" => in_text = true,
                    _ => {}
                }
                stack.push((String::from_utf8_lossy(e.name().as_ref()).into_owned(), offset));
            }
            Event::Empty(e) => {
                if let Some(p) = para.as_mut() {
                    match e.local_name().as_ref() {
                        b"tab" => p.push('\t'),
                        b"br" | b"cr" => p.push('\n'),
                        _ => {}
                    }
                }
            }
            Event::End(e) => {
                stack.pop();
                match e.local_name().as_ref() {
                    b"t" => in_text = false,
                    b"p" => {
                        if let Some(p) = para.take() {
                            let p = p.trim();
                            if !p.is_empty() {
                                out.push(p.to_owned());
                            }
                        }
                    }
                    _ => {}
                }
            }
            Event::Text(t) if in_text => {
                let s = t.unescape().map_err(|e| ExtractError::Malformed {
                    offset,
                    message: e.to_string(),
                })?;
                if let Some(p) = para.as_mut() {
                    p.push_str(&s);
                }
            }
            Event::CData(t) if in_text => {
                if let Some(p) = para.as_mut() {
                    p.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if let Some((element, offset)) = stack.pop() {
        return Err(ExtractError::Unclosed { element, offset });
    }
    Ok(out)
}
