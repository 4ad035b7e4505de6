//! Citation and footnote-marker removal driven by a small rule file.
//!
//! See `resources/citation_rules.txt` for the rule syntax.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use super::{fold_chars, is_punctuation, Sym, TextNormError};

const DEFAULT_RULES: &str = include_str!("../../resources/citation_rules.txt");

const SUPERSCRIPT_DIGITS: [char; 10] = ['⁰', '¹', '²', '³', '⁴', '⁵', '⁶', '⁷', '⁸', '⁹'];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Marker {
    Digits,
    Verse,
    Any,
    /// Keyword as a sequence of folded words.
    Keyword(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SpanRule {
    open: char,
    close: char,
    markers: Vec<Marker>,
}

/// Parsed citation-removal rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CitationRules {
    spans: Vec<SpanRule>,
    superscripts: bool,
}

impl Default for CitationRules {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES).expect("bundled citation rules parse")
    }
}

impl CitationRules {
    /// No rules at all; citation removal becomes the identity.
    pub fn none() -> Self {
        Self {
            spans: Vec::new(),
            superscripts: false,
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TextNormError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TextNormError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TextNormError> {
        let mut spans = Vec::new();
        let mut superscripts = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "superscripts" {
                superscripts = true;
                continue;
            }
            let mut parts = line.splitn(3, char::is_whitespace);
            let open = single_char(parts.next(), line_no, "open delimiter")?;
            let close = single_char(parts.next(), line_no, "close delimiter")?;
            if open == close {
                return Err(TextNormError::RuleSyntax {
                    line: line_no,
                    message: "open and close delimiters must differ".into(),
                });
            }
            let markers_src = parts.next().map(str::trim).unwrap_or("");
            if markers_src.is_empty() {
                return Err(TextNormError::RuleSyntax {
                    line: line_no,
                    message: "missing marker list".into(),
                });
            }
            let mut markers = Vec::new();
            for m in markers_src.split(',').map(str::trim).filter(|m| !m.is_empty()) {
                markers.push(match m {
                    "{digits}" => Marker::Digits,
                    "{verse}" => Marker::Verse,
                    "{any}" => Marker::Any,
                    _ if m.starts_with('{') && m.ends_with('}') => {
                        return Err(TextNormError::RuleSyntax {
                            line: line_no,
                            message: format!("unknown pattern marker {m}"),
                        })
                    }
                    _ => Marker::Keyword(fold_words(m)),
                });
            }
            spans.push(SpanRule {
                open,
                close,
                markers,
            });
        }
        Ok(Self {
            spans,
            superscripts,
        })
    }

    /// Removes matching spans (replaced by a single space) until no rule fires.
    pub(crate) fn apply(&self, syms: &mut Vec<Sym>) {
        if self.superscripts {
            syms.retain(|s| !SUPERSCRIPT_DIGITS.contains(&s.ch));
        }
        loop {
            let mut changed = false;
            for rule in &self.spans {
                changed |= rule.apply_once(syms);
            }
            if !changed {
                break;
            }
        }
    }
}

impl SpanRule {
    fn apply_once(&self, syms: &mut Vec<Sym>) -> bool {
        let mut remove: Vec<(usize, usize)> = Vec::new();
        let mut open_at: Option<usize> = None;
        for (i, s) in syms.iter().enumerate() {
            if s.ch == self.open {
                open_at = Some(i);
            } else if s.ch == self.close {
                if let Some(start) = open_at.take() {
                    let content: String = syms[start + 1..i].iter().map(|s| s.ch).collect();
                    if self.matches(&content) {
                        remove.push((start, i));
                    }
                }
            }
        }
        if remove.is_empty() {
            return false;
        }
        for &(start, end) in remove.iter().rev() {
            let at = syms[start].at;
            syms.splice(start..=end, std::iter::once(Sym { ch: ' ', at }));
        }
        true
    }

    fn matches(&self, content: &str) -> bool {
        let words = fold_words(content);
        self.markers.iter().any(|m| match m {
            Marker::Any => true,
            Marker::Digits => digits_re().is_match(content),
            Marker::Verse => verse_re().is_match(content),
            Marker::Keyword(kw) => {
                !kw.is_empty() && words.windows(kw.len()).any(|w| w == kw.as_slice())
            }
        })
    }
}

fn single_char(part: Option<&str>, line: usize, what: &str) -> Result<char, TextNormError> {
    let part = part.unwrap_or("");
    let mut chars = part.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(TextNormError::RuleSyntax {
            line,
            message: format!("{what} must be a single character, got {part:?}"),
        }),
    }
}

/// Splits on whitespace and punctuation, folding each word to the comparison form.
fn fold_words(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || is_punctuation(c))
        .map(fold_chars)
        .filter(|w| !w.is_empty())
        .collect()
}

fn digits_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\p{Nd}{1,4}\s*$").expect("valid regex"))
}

fn verse_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*[\p{L}\p{M}\s]+\s*[:：]\s*\p{Nd}+(\s*[-–،,]\s*\p{Nd}+)?\s*$")
            .expect("valid regex")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(rules: &CitationRules, s: &str) -> String {
        let mut syms = Sym::from_str(s);
        rules.apply(&mut syms);
        syms.iter().map(|s| s.ch).collect()
    }

    #[test]
    fn removes_narration_span() {
        let rules = CitationRules::default();
        assert_eq!(run(&rules, "قال (رواه البخاري) كذا"), "قال   كذا");
    }

    #[test]
    fn keyword_match_ignores_diacritics() {
        let rules = CitationRules::default();
        assert_eq!(run(&rules, "x (رَوَاهُ مسلم) y"), "x   y");
    }

    #[test]
    fn keeps_plain_parenthetical() {
        let rules = CitationRules::default();
        assert_eq!(run(&rules, "الصلاة (وهي عماد الدين)"), "الصلاة (وهي عماد الدين)");
    }

    #[test]
    fn single_letter_keyword_needs_word_boundary() {
        let rules = CitationRules::parse("( ) ج").unwrap();
        assert_eq!(run(&rules, "(الحج)"), "(الحج)");
        assert_eq!(run(&rules, "(ج 2)"), " ");
    }

    #[test]
    fn footnotes_verses_and_nesting() {
        let rules = CitationRules::default();
        assert_eq!(run(&rules, "نص(1) آخر"), "نص  آخر");
        assert_eq!(run(&rules, "[البقرة: 255]"), " ");
        assert_eq!(run(&rules, "آية ﴿٢٥٥﴾"), "آية  ");
        // inner footnote goes first, then the narration span around it
        assert_eq!(run(&rules, "a (رواه أحمد (3)) b"), "a   b");
        assert_eq!(run(&rules, "a¹ b²"), "a b");
    }

    #[test]
    fn rule_syntax_errors_carry_line() {
        let err = CitationRules::parse("# c\n(( ) x").unwrap_err();
        assert!(matches!(err, TextNormError::RuleSyntax { line: 2, .. }));
        let err = CitationRules::parse("( )").unwrap_err();
        assert!(matches!(err, TextNormError::RuleSyntax { line: 1, .. }));
        let err = CitationRules::parse("( ) {nope}").unwrap_err();
        assert!(matches!(err, TextNormError::RuleSyntax { line: 1, .. }));
    }
}
