use std::path::Path;

use super::GenerationError;
use crate::retrieval::Document;

const DOCS: &str = "docs";
const QUESTION: &str = "question";
const ANSWER: &str = "answer";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Docs,
    Question,
    Answer,
}

/// Plain-text prompt with `{docs}`, `{question}` and `{answer}` slots.
///
/// `{question}` and `{answer}` are required, `{docs}` is optional. Any other
/// brace text is kept literally, so exemplars may contain braces. Values are
/// inserted verbatim and never re-scanned for placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, GenerationError> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            literal.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let slot = after.find('}').and_then(|close| {
                let seg = match &after[..close] {
                    DOCS => Segment::Docs,
                    QUESTION => Segment::Question,
                    ANSWER => Segment::Answer,
                    _ => return None,
                };
                Some((seg, close))
            });
            match slot {
                Some((seg, close)) => {
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(seg);
                    rest = &after[close + 1..];
                }
                None => {
                    literal.push('{');
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        for (slot, seg) in [(QUESTION, Segment::Question), (ANSWER, Segment::Answer)] {
            if !segments.contains(&seg) {
                return Err(GenerationError::Template(format!("template has no {{{slot}}} placeholder")));
            }
        }
        Ok(PromptTemplate { segments })
    }

    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GenerationError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Default answer prompt: few-shot chain-of-thought exemplars ending in
    /// "So the answer is ...".
    pub fn default_answer() -> Self {
        Self::parse(include_str!("../../templates/answer.txt")).expect("bundled answer template")
    }

    /// Default subquery prompt with few-shot subquery exemplars.
    pub fn default_subquery() -> Self {
        Self::parse(include_str!("../../templates/subquery.txt")).expect("bundled subquery template")
    }

    pub fn has_doc_slot(&self) -> bool {
        self.segments.contains(&Segment::Docs)
    }

    /// Fills the slots. With no documents the doc block vanishes, including
    /// the line break that follows a `{docs}` placeholder.
    pub fn render(&self, docs: &[Document], question: &str, partial_answer: &str) -> String {
        let block = doc_block(docs);
        let mut out = String::new();
        let mut skip_newline = false;
        for seg in &self.segments {
            match seg {
                Segment::Literal(text) => {
                    let text = if skip_newline {
                        text.strip_prefix("\r\n").or_else(|| text.strip_prefix('\n')).unwrap_or(text)
                    } else {
                        text
                    };
                    out.push_str(text);
                }
                Segment::Docs => out.push_str(&block),
                Segment::Question => out.push_str(question),
                Segment::Answer => out.push_str(partial_answer),
            }
            skip_newline = matches!(seg, Segment::Docs) && docs.is_empty();
        }
        out
    }
}

/// `[rank] title: body` lines, 1-based, in retrieval order.
fn doc_block(docs: &[Document]) -> String {
    let mut block = String::new();
    for (i, d) in docs.iter().enumerate() {
        let body = d.body.split_whitespace().collect::<Vec<_>>().join(" ");
        if d.title.is_empty() {
            block.push_str(&format!("[{}] {}\n", i + 1, body));
        } else {
            block.push_str(&format!("[{}] {}: {}\n", i + 1, d.title, body));
        }
    }
    block
}
