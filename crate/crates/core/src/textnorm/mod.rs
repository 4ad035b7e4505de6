//! Two-tier Arabic preprocessing.
//!
//! The light tier (`normalize_light`) feeds the dense and rerank stages and
//! keeps every content word. The full tier (`normalize_full`) feeds BM25: it
//! tokenizes the light text, drops stopwords and filters tokens by length and
//! content.
//!
//! Light normalization runs, in order: formatting cleanup (markup, control
//! characters, whitespace), citation removal, punctuation removal, character
//! normalization and dediacritization. It is idempotent.

mod citation;

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

pub use citation::CitationRules;

const DEFAULT_STOPWORDS: &str = include_str!("../../resources/stopwords_ar.txt");

const ALEF: char = '\u{0627}';
const YEH: char = '\u{064A}';
const HEH: char = '\u{0647}';
const TA_MARBUTA: char = '\u{0629}';
const ALEF_MAQSURA: char = '\u{0649}';
const TATWEEL: char = '\u{0640}';

#[derive(Debug, thiserror::Error)]
pub enum TextNormError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("citation rule line {line}: {message}")]
    RuleSyntax { line: usize, message: String },
}

/// Text after light normalization.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedText(String);

impl NormalizedText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.0.split_whitespace().count()
    }

    /// Wraps text that is already known to be normalized (e.g. loaded from a store).
    pub fn from_normalized(text: String) -> Self {
        Self(text)
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for NormalizedText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Tokens produced by full normalization.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenList(Vec<String>);

impl TokenList {
    pub fn new(tokens: Vec<String>) -> Self {
        Self(tokens)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }
}

impl<'a> IntoIterator for &'a TokenList {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Splits lightly normalized text into tokens.
pub trait Tokenizer: Send + Sync + fmt::Debug {
    fn tokenize(&self, text: &NormalizedText) -> Vec<String>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &NormalizedText) -> Vec<String> {
        text.as_str().split_whitespace().map(str::to_owned).collect()
    }
}

/// Stopwords stored in the folded comparison form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopwordSet(HashSet<String>);

impl StopwordSet {
    /// Parses one token per line; `#` lines and blanks are ignored.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(fold_chars)
                .filter(|w| !w.is_empty())
                .collect(),
        )
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TextNormError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TextNormError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&text))
    }

    /// The bundled Arabic list.
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for StopwordSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(
            iter.into_iter()
                .map(|s| fold_chars(&s.into()))
                .filter(|w| !w.is_empty())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharNormOptions {
    /// Map ta marbuta (ة) to ha (ه).
    pub ta_marbuta_to_ha: bool,
}

impl Default for CharNormOptions {
    fn default() -> Self {
        Self {
            ta_marbuta_to_ha: true,
        }
    }
}

/// A token of light text with the byte range it came from in the raw input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedToken {
    pub text: String,
    /// From the first to the last surviving source character, inclusive of its bytes.
    pub span: Range<usize>,
}

/// Both preprocessing tiers with their resources.
///
/// Cheap to clone; resources are shared.
#[derive(Debug, Clone)]
pub struct Normalizer {
    stopwords: Arc<StopwordSet>,
    citations: Arc<CitationRules>,
    tokenizer: Arc<dyn Tokenizer>,
    chars: CharNormOptions,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::new(
            StopwordSet::bundled(),
            CitationRules::default(),
            CharNormOptions::default(),
        )
    }
}

impl Normalizer {
    pub fn new(stopwords: StopwordSet, citations: CitationRules, chars: CharNormOptions) -> Self {
        Self {
            stopwords: Arc::new(stopwords),
            citations: Arc::new(citations),
            tokenizer: Arc::new(WhitespaceTokenizer),
            chars,
        }
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn stopwords(&self) -> &StopwordSet {
        &self.stopwords
    }

    pub fn char_options(&self) -> CharNormOptions {
        self.chars
    }

    pub fn normalize_light(&self, raw: &str) -> NormalizedText {
        let syms = self.light_syms(raw);
        let mut out = String::with_capacity(raw.len());
        for word in split_syms(&syms) {
            if !out.is_empty() {
                out.push(' ');
            }
            out.extend(word.iter().map(|s| s.ch));
        }
        NormalizedText(out)
    }

    /// Light tokens with their source spans; joined with single spaces they
    /// equal `normalize_light(raw)`.
    pub fn light_tokens_aligned(&self, raw: &str) -> Vec<AlignedToken> {
        let syms = self.light_syms(raw);
        split_syms(&syms)
            .map(|word| {
                let first = word[0].at;
                let last = word[word.len() - 1].at;
                let last_len = raw[last..].chars().next().map_or(0, char::len_utf8);
                AlignedToken {
                    text: word.iter().map(|s| s.ch).collect(),
                    span: first..last + last_len,
                }
            })
            .collect()
    }

    pub fn normalize_full(&self, raw: &str) -> TokenList {
        self.full_from_light(&self.normalize_light(raw))
    }

    /// Full tier from already-normalized light text.
    pub fn full_from_light(&self, light: &NormalizedText) -> TokenList {
        TokenList(
            self.tokenizer
                .tokenize(light)
                .into_iter()
                .filter(|t| passes_token_filter(t) && !self.stopwords.contains(t))
                .collect(),
        )
    }

    fn light_syms(&self, raw: &str) -> Vec<Sym> {
        let mut syms = Sym::from_str(raw);
        clean_formatting(&mut syms);
        self.citations.apply(&mut syms);
        for s in syms.iter_mut() {
            if is_punctuation(s.ch) {
                s.ch = ' ';
            }
        }
        syms.retain_mut(|s| match map_char(s.ch, self.chars) {
            Some(c) => {
                s.ch = c;
                true
            }
            None => false,
        });
        syms.retain(|s| !is_diacritic(s.ch));
        syms
    }
}

/// Normalizes with the default resources.
pub fn normalize_light(raw: &str) -> NormalizedText {
    Normalizer::default().normalize_light(raw)
}

/// Full normalization with the default citation rules and the given stopwords.
pub fn normalize_full(raw: &str, stopwords: &StopwordSet) -> TokenList {
    Normalizer::new(
        stopwords.clone(),
        CitationRules::default(),
        CharNormOptions::default(),
    )
    .normalize_full(raw)
}

/// Arabic harakat, tanween, shadda, sukun, superscript alef and Quranic annotation marks.
pub fn is_diacritic(c: char) -> bool {
    matches!(c,
        '\u{0610}'..='\u{061A}'
        | '\u{064B}'..='\u{065F}'
        | '\u{0670}'
        | '\u{06D6}'..='\u{06DC}'
        | '\u{06DF}'..='\u{06E8}'
        | '\u{06EA}'..='\u{06ED}')
}

pub fn dediacritize(raw: &str) -> String {
    raw.chars().filter(|c| !is_diacritic(*c)).collect()
}

pub fn normalize_chars(raw: &str) -> String {
    normalize_chars_with(raw, CharNormOptions::default())
}

pub fn normalize_chars_with(raw: &str, opts: CharNormOptions) -> String {
    raw.chars().filter_map(|c| map_char(c, opts)).collect()
}

/// Unicode `P*` plus the Arabic comma, semicolon and question mark.
pub fn is_punctuation(c: char) -> bool {
    matches!(c, '،' | '؛' | '؟')
        || matches!(
            get_general_category(c),
            GeneralCategory::ConnectorPunctuation
                | GeneralCategory::DashPunctuation
                | GeneralCategory::OpenPunctuation
                | GeneralCategory::ClosePunctuation
                | GeneralCategory::InitialPunctuation
                | GeneralCategory::FinalPunctuation
                | GeneralCategory::OtherPunctuation
        )
}

/// Drops tokens shorter than two characters, pure numbers, and tokens with
/// no letter or digit at all.
pub fn passes_token_filter(token: &str) -> bool {
    let mut count = 0usize;
    let mut all_numeric = true;
    let mut any_alnum = false;
    for c in token.chars() {
        count += 1;
        all_numeric &= c.is_numeric();
        any_alnum |= c.is_alphanumeric();
    }
    count >= 2 && !all_numeric && any_alnum
}

fn map_char(c: char, opts: CharNormOptions) -> Option<char> {
    match c {
        '\u{0623}' | '\u{0625}' | '\u{0622}' | '\u{0671}' => Some(ALEF),
        ALEF_MAQSURA => Some(YEH),
        TATWEEL => None,
        TA_MARBUTA if opts.ta_marbuta_to_ha => Some(HEH),
        _ => Some(c),
    }
}

/// Character normalization plus dediacritization; the form stopwords and
/// citation keywords are compared in.
pub(crate) fn fold_chars(s: &str) -> String {
    s.chars()
        .filter(|c| !is_diacritic(*c))
        .filter_map(|c| map_char(c, CharNormOptions::default()))
        .collect()
}

/// A character together with the byte offset of the source character it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Sym {
    pub ch: char,
    pub at: usize,
}

impl Sym {
    pub(crate) fn from_str(s: &str) -> Vec<Sym> {
        s.char_indices().map(|(at, ch)| Sym { ch, at }).collect()
    }
}

fn split_syms(syms: &[Sym]) -> impl Iterator<Item = &[Sym]> {
    syms.split(|s| s.ch.is_whitespace()).filter(|w| !w.is_empty())
}

/// Control/format characters become spaces, markup tags are stripped to a
/// fixpoint and stray angle brackets are dropped.
fn clean_formatting(syms: &mut Vec<Sym>) {
    for s in syms.iter_mut() {
        if !s.ch.is_whitespace()
            && matches!(
                get_general_category(s.ch),
                GeneralCategory::Control | GeneralCategory::Format
            )
        {
            s.ch = ' ';
        }
    }
    while strip_tags_once(syms) {}
    for s in syms.iter_mut() {
        if s.ch == '<' || s.ch == '>' {
            s.ch = ' ';
        }
    }
}

/// Removes every `<x ...>` with no nested angle brackets, where `x` is an
/// ASCII letter, `/`, `!` or `?`.
fn strip_tags_once(syms: &mut Vec<Sym>) -> bool {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, s) in syms.iter().enumerate() {
        match s.ch {
            '<' => {
                let starts_tag = syms
                    .get(i + 1)
                    .is_some_and(|n| n.ch.is_ascii_alphabetic() || matches!(n.ch, '/' | '!' | '?'));
                open = starts_tag.then_some(i);
            }
            '>' => {
                if let Some(start) = open.take() {
                    spans.push(start..i + 1);
                }
            }
            _ => {}
        }
    }
    if spans.is_empty() {
        return false;
    }
    for span in spans.into_iter().rev() {
        let at = syms[span.start].at;
        syms.splice(span, std::iter::once(Sym { ch: ' ', at }));
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn light_examples() {
        assert_eq!(normalize_light("").as_str(), "");
        assert_eq!(normalize_light("abc  def").as_str(), "abc def");
        // ز + shadda + fatha, ك + fatha, ا, ة + damma; ta marbuta folds to ha
        assert_eq!(normalize_light("الزَّكَاةُ").as_str(), "الزكاه");
    }

    #[test]
    fn ta_marbuta_flag_off_keeps_letter() {
        let n = Normalizer::new(
            StopwordSet::empty(),
            CitationRules::none(),
            CharNormOptions {
                ta_marbuta_to_ha: false,
            },
        );
        assert_eq!(n.normalize_light("الزَّكَاةُ").as_str(), "الزكاة");
    }

    #[test]
    fn dediacritize_examples() {
        assert_eq!(dediacritize(""), "");
        assert_eq!(dediacritize("محمد"), "محمد");
        assert_eq!(dediacritize("مُحَمَّد"), "محمد");
        assert_eq!(dediacritize("\u{0645}\u{064F}\u{062D}\u{064E}\u{0645}\u{0651}\u{064E}\u{062F}"), "\u{0645}\u{062D}\u{0645}\u{062F}");
    }

    #[test]
    fn char_examples() {
        assert_eq!(normalize_chars("إسلام"), "اسلام");
        assert_eq!(normalize_chars("على"), "علي");
        assert_eq!(normalize_chars("latin"), "latin");
        assert_eq!(normalize_chars("أآٱإ"), "اااا");
        assert_eq!(normalize_chars("كـــتاب"), "كتاب");
    }

    #[test]
    fn punctuation_and_markup() {
        assert_eq!(normalize_light("قال، ثم؛ سأل؟").as_str(), "قال ثم سال");
        assert_eq!(normalize_light("<p>نص</p><br/>آخر").as_str(), "نص اخر");
        assert_eq!(normalize_light("a < b").as_str(), "a b");
        assert_eq!(normalize_light("x\u{200F}y\tz\u{0007}w").as_str(), "x y z w");
    }

    #[test]
    fn full_examples() {
        let sw = StopwordSet::bundled();
        assert!(normalize_full("", &sw).is_empty());
        assert!(normalize_full("في من على", &sw).is_empty());
        // "في" is a stopword
        assert_eq!(
            normalize_full("الصلاة في المسجد", &sw).into_vec(),
            vec!["الصلاه".to_string(), "المسجد".to_string()]
        );
    }

    #[test]
    fn token_filter() {
        assert!(!passes_token_filter("و"));
        assert!(!passes_token_filter("١٢٣"));
        assert!(!passes_token_filter("2024"));
        assert!(!passes_token_filter("$$"));
        assert!(passes_token_filter("ab"));
        assert!(passes_token_filter("a1"));
        assert!(passes_token_filter("سورة"));
    }

    #[test]
    fn stopwords_fold_on_load() {
        let sw = StopwordSet::parse("# c\nإلى\n\nعلى\n");
        assert_eq!(sw.len(), 2);
        assert!(sw.contains("الي"));
        assert!(sw.contains("علي"));
    }

    #[test]
    fn aligned_tokens_point_at_source() {
        let n = Normalizer::default();
        let raw = "قالَ: (رواه مسلم) الصلاةُ";
        let toks = n.light_tokens_aligned(raw);
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["قال", "الصلاه"]);
        assert_eq!(&raw[toks[0].span.clone()], "قال");
        assert_eq!(&raw[toks[1].span.clone()], "الصلاة");
        assert_eq!(texts.join(" "), n.normalize_light(raw).as_str());
    }
}
