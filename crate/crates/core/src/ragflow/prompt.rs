//! Prompt template parsing and rendering.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Letter;

const BUNDLED: &str = include_str!("../../resources/prompt_template.txt");

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("template is missing section @@ {0}")]
    MissingSection(&'static str),
    #[error("section {section} uses unknown slot {{{slot}}}")]
    UnknownSlot { section: String, slot: String },
    #[error("layout must contain {{{0}}}")]
    MissingSlot(&'static str),
    #[error("question must have at least two options, got {0}")]
    TooFewOptions(usize),
    #[error("{found} contexts exceed the limit of {limit}")]
    TooManyContexts { found: usize, limit: usize },
    #[error("I/O error reading template: {0}")]
    Io(#[from] std::io::Error),
}

const SECTIONS: [(&str, &[&str]); 8] = [
    ("persona", &[]),
    ("example", &["question", "options", "reasoning", "answer"]),
    ("context_header", &[]),
    ("context", &["rank", "score", "text"]),
    ("no_context", &[]),
    ("option", &["letter", "text"]),
    ("constraint", &[]),
    ("layout", &["persona", "examples", "contexts", "question", "options", "constraint"]),
];

/// Solved item shown before the question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub id: String,
    pub question: String,
    pub options: BTreeMap<Letter, String>,
    pub answer: Letter,
    /// Rendered only when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

/// A retrieved passage as it appears in the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub rank: usize,
    pub score: f64,
    /// Original chunk text, not a normalized form.
    pub text: String,
}

/// Everything that goes into one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub persona: String,
    pub examples: Vec<FewShotExample>,
    /// `None` leaves the reference block out entirely; `Some(vec![])` renders
    /// the no-context note.
    pub contexts: Option<Vec<PromptContext>>,
    pub question: String,
    pub options: BTreeMap<Letter, String>,
    pub constraint: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    sections: BTreeMap<String, String>,
}

impl PromptTemplate {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled prompt template is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, line) in text.lines().enumerate() {
            if let Some(name) = line.strip_prefix("@@") {
                let name = name.trim();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return Err(PromptError::Syntax {
                        line: idx + 1,
                        message: format!("unknown section {name:?}"),
                    });
                }
                if sections.insert(name.to_owned(), Vec::new()).is_some() {
                    return Err(PromptError::Syntax {
                        line: idx + 1,
                        message: format!("duplicate section {name:?}"),
                    });
                }
                current = Some(name.to_owned());
            } else if let Some(name) = &current {
                sections.get_mut(name).expect("section exists").push(line);
            } else if !(line.trim().is_empty() || line.starts_with('#')) {
                return Err(PromptError::Syntax {
                    line: idx + 1,
                    message: "text before the first section".into(),
                });
            }
        }
        let mut out = BTreeMap::new();
        for (name, allowed) in SECTIONS {
            let lines = sections.remove(name).ok_or(PromptError::MissingSection(name))?;
            let body = lines.join("\n").trim_matches('\n').trim_end().to_owned();
            for slot in slots_in(&body) {
                if !allowed.contains(&slot) {
                    return Err(PromptError::UnknownSlot {
                        section: name.to_owned(),
                        slot: slot.to_owned(),
                    });
                }
            }
            out.insert(name.to_owned(), body);
        }
        for required in ["question", "options", "constraint"] {
            if !slots_in(&out["layout"]).any(|s| s == required) {
                return Err(PromptError::MissingSlot(required));
            }
        }
        Ok(Self { sections: out })
    }

    pub fn persona(&self) -> &str {
        &self.sections["persona"]
    }

    pub fn constraint(&self) -> &str {
        &self.sections["constraint"]
    }

    /// Builds a bundle using this template's persona and constraint.
    pub fn bundle(
        &self,
        question: &str,
        options: &BTreeMap<Letter, String>,
        examples: Vec<FewShotExample>,
        contexts: Option<Vec<PromptContext>>,
    ) -> PromptBundle {
        PromptBundle {
            persona: self.persona().to_owned(),
            examples,
            contexts,
            question: question.to_owned(),
            options: options.clone(),
            constraint: self.constraint().to_owned(),
        }
    }

    fn render_options(&self, options: &BTreeMap<Letter, String>) -> String {
        options
            .iter()
            .map(|(l, t)| fill(&self.sections["option"], &[("letter", &l.to_string()), ("text", t)]))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn render(&self, bundle: &PromptBundle) -> String {
        let examples = bundle
            .examples
            .iter()
            .map(|ex| {
                fill(
                    &self.sections["example"],
                    &[
                        ("question", &ex.question),
                        ("options", &self.render_options(&ex.options)),
                        ("reasoning", ex.reasoning.as_deref().unwrap_or("")),
                        ("answer", &ex.answer.to_string()),
                    ],
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let contexts = match &bundle.contexts {
            None => String::new(),
            Some(cs) if cs.is_empty() => self.sections["no_context"].clone(),
            Some(cs) => {
                let mut block = vec![self.sections["context_header"].clone()];
                block.extend(cs.iter().map(|c| {
                    fill(
                        &self.sections["context"],
                        &[
                            ("rank", &c.rank.to_string()),
                            ("score", &format!("{:.4}", c.score)),
                            ("text", &c.text),
                        ],
                    )
                }));
                block.join("\n")
            }
        };
        fill(
            &self.sections["layout"],
            &[
                ("persona", &bundle.persona),
                ("examples", &examples),
                ("contexts", &contexts),
                ("question", &bundle.question),
                ("options", &self.render_options(&bundle.options)),
                ("constraint", &bundle.constraint),
            ],
        )
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::bundled()
    }
}

fn slots_in(text: &str) -> impl Iterator<Item = &str> {
    text.match_indices('{').filter_map(move |(i, _)| {
        let rest = &text[i + 1..];
        let end = rest.find('}')?;
        let name = &rest[..end];
        (!name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')).then_some(name)
    })
}

/// Substitutes slots in one pass over the template, so values are never
/// rescanned. Lines holding only a slot whose value is empty are dropped.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let lookup = |name: &str| values.iter().find(|(k, _)| *k == name).map(|(_, v)| *v);
    let mut out = Vec::new();
    for line in template.lines() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
            if lookup(name) == Some("") {
                continue;
            }
        }
        let mut rendered = String::with_capacity(line.len());
        let mut rest = line;
        while let Some(open) = rest.find('{') {
            rendered.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}').and_then(|close| lookup(&after[..close]).map(|v| (close, v))) {
                Some((close, v)) => {
                    rendered.push_str(v);
                    rest = &after[close + 1..];
                }
                None => {
                    rendered.push('{');
                    rest = after;
                }
            }
        }
        rendered.push_str(rest);
        out.push(rendered);
    }
    out.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> BTreeMap<Letter, String> {
        [("A", "ركعتان"), ("B", "ثلاث"), ("C", "أربع")]
            .into_iter()
            .map(|(l, t)| (l.parse().unwrap(), t.to_owned()))
            .collect()
    }

    #[test]
    fn minimal_prompt_has_only_fixed_parts() {
        let t = PromptTemplate::bundled();
        let text = t.render(&t.bundle("كم ركعة الفجر؟", &opts(), vec![], None));
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], t.persona());
        assert_eq!(lines[1], "QUESTION: كم ركعة الفجر؟");
        assert_eq!(lines[2], "MULTIPLE CHOICES:");
        assert_eq!(&lines[3..6], ["A) ركعتان", "B) ثلاث", "C) أربع"]);
        assert_eq!(lines[6], t.constraint());
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn contexts_in_rank_order_with_scores() {
        let t = PromptTemplate::bundled();
        let ctx: Vec<_> = (1..=5)
            .map(|r| PromptContext {
                rank: r,
                score: 1.0 / r as f64,
                text: format!("نص {r}"),
            })
            .collect();
        let text = t.render(&t.bundle("س", &opts(), vec![], Some(ctx)));
        let mut last = 0;
        for r in 1..=5 {
            let at = text.find(&format!("[{r}] (score {:.4})\nنص {r}", 1.0 / r as f64)).unwrap();
            assert!(at > last);
            last = at;
        }
        assert!(text.find("reference text").unwrap() < text.find("[1]").unwrap());
        assert!(text.find("[5]").unwrap() < text.find("QUESTION:").unwrap());
    }

    #[test]
    fn empty_contexts_render_a_note() {
        let t = PromptTemplate::bundled();
        let text = t.render(&t.bundle("س", &opts(), vec![], Some(vec![])));
        assert!(text.contains("(no reference text retrieved)"));
        assert!(!text.contains("[1]"));
    }

    #[test]
    fn examples_precede_the_question_and_skip_missing_reasoning() {
        let t = PromptTemplate::bundled();
        let ex = FewShotExample {
            id: "d1".into(),
            question: "مثال؟".into(),
            options: opts(),
            answer: "B".parse().unwrap(),
            reasoning: None,
        };
        let text = t.render(&t.bundle("س", &opts(), vec![ex.clone()], None));
        assert!(text.contains("QUESTION: مثال؟\nMULTIPLE CHOICES:\nA) ركعتان\nB) ثلاث\nC) أربع\nANSWER: B"));
        assert!(text.find("مثال").unwrap() < text.find("QUESTION: س").unwrap());
        let with = FewShotExample {
            reasoning: Some("لأن".into()),
            ..ex
        };
        assert!(t.render(&t.bundle("س", &opts(), vec![with], None)).contains("C) أربع\nلأن\nANSWER: B"));
    }

    #[test]
    fn slot_text_in_values_is_not_expanded() {
        let t = PromptTemplate::bundled();
        let text = t.render(&t.bundle("what is {persona}?", &opts(), vec![], None));
        assert!(text.contains("QUESTION: what is {persona}?"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = PromptTemplate::bundled();
        let b = t.bundle("س", &opts(), vec![], Some(vec![]));
        assert_eq!(t.render(&b), t.render(&b.clone()));
    }

    #[test]
    fn template_validation() {
        let base = BUNDLED.to_owned();
        assert!(matches!(
            PromptTemplate::parse(&base.replace("{question}", "{questoin}")),
            Err(PromptError::UnknownSlot { .. })
        ));
        assert!(matches!(
            PromptTemplate::parse(&base.replace("@@ no_context", "@@ nothing")),
            Err(PromptError::Syntax { .. })
        ));
        let no_constraint = base.replace("\n{constraint}\n", "\n");
        assert!(matches!(PromptTemplate::parse(&no_constraint), Err(PromptError::MissingSlot("constraint"))));
    }
}
