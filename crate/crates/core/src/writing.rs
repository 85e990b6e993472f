//! Academic writing: terminology-aware translation and polishing with
//! machine-checkable edits.

use crate::llm::{Backend, BackendError, ChatRequest, PromptLibrary, TemplateError};
use crate::text::{fold, PhraseMatcher};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WritingError {
    #[error("source text is empty")]
    EmptySource,
    #[error("draft is empty")]
    EmptyDraft,
    #[error("unparseable model output: {0}")]
    UnparseableOutput(String),
    #[error("backend failure: {0}")]
    BackendFailure(#[from] BackendError),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("cannot read lexicon: {0}")]
    Io(String),
}

impl From<TemplateError> for WritingError {
    fn from(e: TemplateError) -> Self {
        Self::BackendFailure(BackendError::Template(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TermEntry {
    pub source_term: String,
    pub target_term: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_tag: Option<String>,
}

impl TermEntry {
    pub fn new(source: &str, target: &str, domain: Option<&str>) -> Self {
        Self {
            source_term: source.to_string(),
            target_term: target.to_string(),
            domain_tag: domain.map(str::to_string),
        }
    }

    fn swapped(&self) -> Self {
        Self {
            source_term: self.target_term.clone(),
            target_term: self.source_term.clone(),
            domain_tag: self.domain_tag.clone(),
        }
    }
}

/// Terminology lexicon; `(source_term, domain_tag)` is unique ignoring case.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    entries: Vec<TermEntry>,
}

impl Lexicon {
    pub fn new(entries: Vec<TermEntry>) -> Result<Self, WritingError> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            let err = |message: String| WritingError::Lexicon { line: i + 1, message };
            if e.source_term.trim().is_empty() || e.target_term.trim().is_empty() {
                return Err(err("empty term".into()));
            }
            if !seen.insert((fold(&e.source_term), e.domain_tag.as_deref().map(fold))) {
                return Err(err(format!("duplicate entry {:?}", e.source_term)));
            }
        }
        Ok(Self { entries })
    }

    /// Rows `source<TAB>target[<TAB>domain]`; blank lines and `#` comments
    /// skipped.
    pub fn parse_tsv(raw: &str) -> Result<Self, WritingError> {
        let mut entries = Vec::new();
        let mut line_numbers = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            line_numbers.push(i + 1);
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            let entry = match cols.as_slice() {
                [s, t] => TermEntry::new(s, t, None),
                [s, t, d] => TermEntry::new(s, t, Some(d).filter(|d| !d.is_empty()).copied()),
                _ => {
                    return Err(WritingError::Lexicon {
                        line: i + 1,
                        message: "expected 2 or 3 tab-separated columns".into(),
                    })
                }
            };
            entries.push(entry);
        }
        Self::new(entries).map_err(|e| match e {
            WritingError::Lexicon { line, message } => WritingError::Lexicon {
                line: line_numbers[line - 1],
                message,
            },
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self, WritingError> {
        let raw = std::fs::read_to_string(path).map_err(|e| WritingError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_tsv(&raw)
    }

    pub fn entries(&self) -> &[TermEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The same lexicon read in the opposite direction.
    pub fn reversed(&self) -> Vec<TermEntry> {
        self.entries.iter().map(TermEntry::swapped).collect()
    }
}

/// Case-insensitive leftmost-longest scan for lexicon source terms, one
/// result per distinct term in order of first occurrence. With `domain`,
/// only entries tagged with it or untagged take part; a tagged entry beats
/// an untagged one for the same term.
pub fn detect_terms(source: &str, lexicon: &[TermEntry], domain: Option<&str>) -> Vec<TermEntry> {
    let mut best: BTreeMap<String, &TermEntry> = BTreeMap::new();
    for e in lexicon {
        let rank = |e: &TermEntry| {
            let tag_rank = match (&e.domain_tag, domain) {
                (Some(t), Some(d)) if fold(t) == fold(d) => 0,
                (None, _) => 1,
                (Some(_), None) => 2,
                (Some(_), Some(_)) => return None,
            };
            Some((tag_rank, e.domain_tag.clone(), e.target_term.clone(), e.source_term.clone()))
        };
        let Some(r) = rank(e) else { continue };
        let key = fold(&e.source_term);
        match best.get(&key) {
            Some(cur) if rank(cur) <= Some(r) => {}
            _ => {
                best.insert(key, e);
            }
        }
    }
    let chosen: Vec<&TermEntry> = best.into_values().collect();
    let matcher = PhraseMatcher::new(&chosen.iter().map(|e| e.source_term.as_str()).collect::<Vec<_>>());
    let mut out: Vec<TermEntry> = Vec::new();
    for m in matcher.find_all(source) {
        let e = chosen[m.phrase];
        if !out.contains(e) {
            out.push(e.clone());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "en-zh")]
    EnZh,
    #[serde(rename = "zh-en")]
    ZhEn,
}

impl Direction {
    fn describe(self) -> &'static str {
        match self {
            Self::EnZh => "from English into Chinese",
            Self::ZhEn => "from Chinese into English",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('→', "-").as_str() {
            "en-zh" | "en2zh" | "enzh" => Ok(Self::EnZh),
            "zh-en" | "zh2en" | "zhen" => Ok(Self::ZhEn),
            other => Err(format!("unknown direction {other:?}; expected en-zh or zh-en")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub translated: String,
    pub injected_terms: Vec<TermEntry>,
    pub prompt_used: String,
}

/// Glossary lines for the prompt, one `TERM: a => b` per entry.
pub fn term_lines(terms: &[TermEntry]) -> String {
    if terms.is_empty() {
        return "(none)".to_string();
    }
    terms
        .iter()
        .map(|t| format!("TERM: {} => {}", t.source_term, t.target_term))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Lexicon entries are written English to Chinese; for zh-en they are read
/// reversed.
pub fn translate(
    source: &str,
    direction: Direction,
    lexicon: &Lexicon,
    domain: Option<&str>,
    backend: &dyn Backend,
    prompts: &PromptLibrary,
) -> Result<TranslationResult, WritingError> {
    let source = source.trim();
    if source.is_empty() {
        return Err(WritingError::EmptySource);
    }
    let oriented = match direction {
        Direction::EnZh => lexicon.entries.clone(),
        Direction::ZhEn => lexicon.reversed(),
    };
    let injected_terms = detect_terms(source, &oriented, domain);
    let terms = term_lines(&injected_terms);
    let prompt_used = prompts.render(
        "translate",
        [("direction", direction.describe()), ("terms", terms.as_str()), ("source", source)],
    )?;
    let translated = backend.complete(&ChatRequest::user(prompt_used.clone()))?.content;
    Ok(TranslationResult {
        translated,
        injected_terms,
        prompt_used,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Academic,
    Concise,
}

impl Style {
    fn tag(self) -> &'static str {
        match self {
            Self::Academic => "academic",
            Self::Concise => "concise",
        }
    }

    fn instruction(self) -> &'static str {
        match self {
            Self::Academic => "Improve grammar, word choice and formal academic register while keeping the meaning.",
            Self::Concise => "Make the text shorter and plainer by removing redundancy while keeping the meaning.",
        }
    }
}

impl FromStr for Style {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "academic" => Ok(Self::Academic),
            "concise" => Ok(Self::Concise),
            other => Err(format!("unknown style {other:?}; expected academic or concise")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    /// Byte range in the (trimmed) original.
    pub span: (usize, usize),
    pub original: String,
    pub replacement: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolishResult {
    pub original: String,
    pub polished: String,
    pub edits: Vec<Edit>,
    /// EDIT lines whose original text could not be located.
    pub dropped_edits: usize,
}

/// Applies sorted, non-overlapping edits.
pub fn apply_edits(original: &str, edits: &[Edit]) -> String {
    let mut out = String::with_capacity(original.len());
    let mut pos = 0;
    for e in edits {
        out.push_str(&original[pos..e.span.0]);
        out.push_str(&e.replacement);
        pos = e.span.1;
    }
    out.push_str(&original[pos..]);
    out
}

struct RawEdit {
    original: String,
    replacement: String,
    rationale: String,
}

fn parse_edit(line: &str) -> Option<RawEdit> {
    let body = line.strip_prefix("EDIT:")?.trim();
    let (original, rest) = body.split_once(" => ")?;
    let (replacement, rationale) = match rest.rsplit_once(" // ") {
        Some((r, why)) => (r, why.trim()),
        None => (rest, ""),
    };
    Some(RawEdit {
        original: original.trim().to_string(),
        replacement: replacement.trim().to_string(),
        rationale: rationale.to_string(),
    })
}

/// Parses EDIT/FINAL output against `draft`. Each edit lands on the
/// leftmost occurrence not overlapping an earlier edit.
pub fn parse_polish_output(draft: &str, reply: &str) -> Result<PolishResult, WritingError> {
    let mut raw_edits = Vec::new();
    let mut final_text: Option<String> = None;
    let lines: Vec<&str> = reply.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        let t = line.trim_start();
        if let Some(first) = t.strip_prefix("FINAL:") {
            let mut text = first.trim_start().to_string();
            for rest in &lines[i + 1..] {
                text.push('\n');
                text.push_str(rest);
            }
            final_text = Some(text.trim().to_string());
            break;
        }
        if let Some(e) = parse_edit(t) {
            raw_edits.push(e);
        }
    }
    let polished = final_text.ok_or_else(|| WritingError::UnparseableOutput("no FINAL marker".into()))?;

    let mut edits: Vec<Edit> = Vec::new();
    let mut dropped = 0;
    for e in raw_edits {
        let placed = if e.original.is_empty() {
            None
        } else {
            draft
                .match_indices(e.original.as_str())
                .map(|(s, m)| (s, s + m.len()))
                .find(|&(s, end)| edits.iter().all(|x| end <= x.span.0 || s >= x.span.1))
        };
        match placed {
            Some(span) => edits.push(Edit {
                span,
                original: e.original,
                replacement: e.replacement,
                rationale: e.rationale,
            }),
            None => dropped += 1,
        }
    }
    edits.sort_by_key(|e| e.span.0);
    let applied = apply_edits(draft, &edits);
    if applied != polished {
        return Err(WritingError::UnparseableOutput(
            "applying the listed edits does not reproduce the FINAL text".into(),
        ));
    }
    Ok(PolishResult {
        original: draft.to_string(),
        polished,
        edits,
        dropped_edits: dropped,
    })
}

/// Few-shot, think-first polishing. The draft is trimmed; spans refer to
/// the trimmed text.
pub fn polish(draft: &str, style: Style, backend: &dyn Backend, prompts: &PromptLibrary) -> Result<PolishResult, WritingError> {
    let draft = draft.trim();
    if draft.is_empty() {
        return Err(WritingError::EmptyDraft);
    }
    let prompt = prompts.render(
        "polish",
        [("style", style.tag()), ("style_instruction", style.instruction()), ("draft", draft)],
    )?;
    let reply = backend.complete(&ChatRequest::user(prompt))?.content;
    parse_polish_output(draft, &reply)
}
