//! Paper documents: cleaning, structured parsing with chapter recognition,
//! and section-bounded chunking.

use crate::text::{self, is_cjk};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::LazyLock;
use thiserror::Error;

pub const MAX_SECTION_DEPTH: usize = 6;
const FRONT_MATTER: &str = "Front Matter";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("document has no content")]
    EmptyDocument,
    #[error("malformed header line: {0:?}")]
    MalformedHeader(String),
    #[error("invalid chunk policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
    Mixed,
}

impl Language {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zh" => Some(Self::Zh),
            "en" => Some(Self::En),
            "mixed" => Some(Self::Mixed),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Zh => "zh",
            Self::En => "en",
            Self::Mixed => "mixed",
        }
    }

    /// Share of CJK characters among letters decides the tag.
    pub fn detect(text: &str) -> Self {
        let (mut cjk, mut latin) = (0usize, 0usize);
        for c in text.chars() {
            if is_cjk(c) && c.is_alphabetic() {
                cjk += 1;
            } else if c.is_ascii_alphabetic() {
                latin += 1;
            }
        }
        if cjk + latin == 0 {
            return Self::En;
        }
        let share = cjk as f64 / (cjk + latin) as f64;
        if share >= 0.9 {
            Self::Zh
        } else if share <= 0.1 {
            Self::En
        } else {
            Self::Mixed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Markdown,
    Plain,
}

impl std::str::FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "markdown-like" | "md" => Ok(Self::Markdown),
            "plain" | "txt" => Ok(Self::Plain),
            other => Err(format!("unknown format {other:?} (expected markdown or plain)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub depth: usize,
    pub body: String,
    pub children: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperDocument {
    pub doc_id: String,
    pub title: String,
    pub authors: Vec<String>,
    pub institutions: Vec<String>,
    pub venue: Option<String>,
    pub year: Option<i32>,
    pub language: Language,
    pub abstract_text: String,
    /// Research-area tags; feed the retrieval index's domain filter.
    #[serde(default)]
    pub domains: Vec<String>,
    pub sections: Vec<Section>,
    pub references: Vec<String>,
    pub source_uri: String,
}

/// A section visited in pre-order, with its heading path from the root.
#[derive(Debug, Clone, Copy)]
pub struct SectionRef<'a> {
    pub ordinal: usize,
    pub path: &'a [String],
    pub section: &'a Section,
}

impl PaperDocument {
    /// Sections in pre-order together with their heading paths.
    pub fn sections_preorder(&self) -> Vec<(Vec<String>, &Section)> {
        fn walk<'a>(s: &'a Section, path: &mut Vec<String>, out: &mut Vec<(Vec<String>, &'a Section)>) {
            path.push(s.heading.clone());
            out.push((path.clone(), s));
            for c in &s.children {
                walk(c, path, out);
            }
            path.pop();
        }
        let mut out = Vec::new();
        let mut path = Vec::new();
        for s in &self.sections {
            walk(s, &mut path, &mut out);
        }
        out
    }

    pub fn compute_doc_id(&self) -> String {
        let sections = self.sections_preorder();
        let mut parts: Vec<&str> = vec![self.title.as_str()];
        parts.extend(sections.iter().map(|(_, s)| s.body.as_str()));
        text::short_hash(&parts)
    }

    /// Title followed by the abstract, the text used to embed a whole paper.
    pub fn title_and_abstract(&self) -> String {
        if self.abstract_text.is_empty() {
            self.title.clone()
        } else {
            format!("{}\n{}", self.title, self.abstract_text)
        }
    }

    /// Renders the document back to the markdown-like source format.
    ///
    /// Parsing the output as markdown reproduces this document.
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Title: {}", self.title);
        if !self.authors.is_empty() {
            let _ = writeln!(out, "Authors: {}", self.authors.join("; "));
        }
        if !self.institutions.is_empty() {
            let _ = writeln!(out, "Institutions: {}", self.institutions.join("; "));
        }
        if let Some(v) = &self.venue {
            let _ = writeln!(out, "Venue: {v}");
        }
        if let Some(y) = self.year {
            let _ = writeln!(out, "Year: {y}");
        }
        let _ = writeln!(out, "Language: {}", self.language.as_str());
        if !self.domains.is_empty() {
            let _ = writeln!(out, "Domains: {}", self.domains.join("; "));
        }
        if !self.source_uri.is_empty() {
            let _ = writeln!(out, "Source: {}", self.source_uri);
        }
        if !self.abstract_text.is_empty() {
            let _ = write!(out, "\n# Abstract\n{}\n", self.abstract_text);
        }
        fn emit(s: &Section, out: &mut String) {
            let _ = write!(out, "\n{} {}\n", "#".repeat(s.depth), s.heading);
            if !s.body.is_empty() {
                let _ = writeln!(out, "{}", s.body);
            }
            for c in &s.children {
                emit(c, out);
            }
        }
        for s in &self.sections {
            emit(s, &mut out);
        }
        if !self.references.is_empty() {
            let _ = write!(out, "\n# References\n{}\n", self.references.join("\n"));
        }
        out
    }
}

/// Removes control characters, collapses whitespace runs, joins end-of-line
/// hyphenation and drops header/footer lines repeated on three or more
/// form-feed-delimited pages. Idempotent.
pub fn clean_text(raw: &str) -> String {
    let pages: Vec<&str> = raw.split('\x0C').collect();
    let repeated = repeated_page_lines(&pages);

    let mut kept = String::with_capacity(raw.len());
    for (pi, page) in pages.iter().enumerate() {
        if pi > 0 {
            kept.push('\n');
        }
        let mut first = true;
        for line in page.split('\n') {
            if repeated.contains(line.trim()) {
                continue;
            }
            if !first {
                kept.push('\n');
            }
            first = false;
            kept.push_str(line);
        }
    }

    let mut collapsed = String::with_capacity(kept.len());
    let mut in_space = false;
    for c in kept.chars() {
        if c.is_control() && c != '\n' && c != '\t' {
            continue;
        }
        if c != '\n' && c.is_whitespace() {
            if !in_space {
                collapsed.push(' ');
            }
            in_space = true;
        } else {
            collapsed.push(c);
            in_space = false;
        }
    }

    let chars: Vec<char> = collapsed.chars().collect();
    let mut out = String::with_capacity(collapsed.len());
    let mut last: Option<char> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '-'
            && chars.get(i + 1) == Some(&'\n')
            && last.is_some_and(char::is_alphabetic)
            && chars.get(i + 2).is_some_and(|n| n.is_alphabetic())
        {
            i += 2;
            continue;
        }
        out.push(c);
        last = Some(c);
        i += 1;
    }
    out
}

fn repeated_page_lines(pages: &[&str]) -> HashSet<String> {
    if pages.len() < 3 {
        return HashSet::new();
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for page in pages {
        let distinct: HashSet<&str> = page
            .split('\n')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        for l in distinct {
            *counts.entry(l).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, n)| n >= 3)
        .map(|(l, _)| l.to_string())
        .collect()
}

static HEADER_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([A-Za-z][A-Za-z ]*?)\s*:\s*(.*)$").unwrap());
static MD_HEADING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(#{1,6})\s+(.+?)\s*#*\s*$").unwrap());
static NUMBERED_HEADING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{1,2}(?:\.\d{1,2}){0,5})\.?\s+(\S.*)$").unwrap());
static ABSTRACT_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^abstract\s*(?:[:.\-]\s*|\n|$)").unwrap());

const HEADER_KEYS: &[&str] = &[
    "title",
    "authors",
    "author",
    "institutions",
    "venue",
    "year",
    "language",
    "domains",
    "source",
];

#[derive(Default)]
struct Header {
    title: Option<String>,
    authors: Vec<String>,
    institutions: Vec<String>,
    venue: Option<String>,
    year: Option<i32>,
    language: Option<Language>,
    domains: Vec<String>,
    source: String,
}

fn split_list(v: &str) -> Vec<String> {
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn header_key(line: &str) -> Option<(String, String)> {
    let caps = HEADER_LINE.captures(line)?;
    let key = caps[1].to_ascii_lowercase();
    HEADER_KEYS
        .contains(&key.as_str())
        .then(|| (key, caps[2].trim().to_string()))
}

fn parse_header(lines: &[&str]) -> Result<Header, CorpusError> {
    let mut h = Header::default();
    let mut seen = HashSet::new();
    for line in lines {
        let malformed = || CorpusError::MalformedHeader(line.to_string());
        let (key, value) = header_key(line).ok_or_else(malformed)?;
        let key = if key == "author" { "authors".to_string() } else { key };
        if !seen.insert(key.clone()) {
            return Err(malformed());
        }
        match key.as_str() {
            "title" => h.title = Some(value).filter(|v| !v.is_empty()),
            "authors" => h.authors = split_list(&value),
            "institutions" => h.institutions = split_list(&value),
            "venue" => h.venue = Some(value).filter(|v| !v.is_empty()),
            "year" => {
                let y: i32 = value.parse().map_err(|_| malformed())?;
                if !(1900..=2100).contains(&y) {
                    return Err(malformed());
                }
                h.year = Some(y);
            }
            "language" => h.language = Some(Language::parse(&value).ok_or_else(malformed)?),
            "domains" => h.domains = split_list(&value),
            "source" => h.source = value,
            _ => unreachable!("key filtered by HEADER_KEYS"),
        }
    }
    Ok(h)
}

fn detect_heading(line: &str, format: SourceFormat) -> Option<(usize, String)> {
    let line = line.trim();
    match format {
        SourceFormat::Markdown => {
            let caps = MD_HEADING.captures(line)?;
            Some((caps[1].len(), caps[2].to_string()))
        }
        SourceFormat::Plain => {
            if let Some(caps) = NUMBERED_HEADING.captures(line) {
                let text = caps[2].trim();
                let first = text.chars().next()?;
                let words = text.split_whitespace().count();
                let ends_like_prose = text.ends_with(['.', ',', ';', ':']);
                if (first.is_uppercase() || is_cjk(first)) && words <= 12 && text.len() <= 100 && !ends_like_prose {
                    let depth = caps[1].split('.').count().min(MAX_SECTION_DEPTH);
                    return Some((depth, text.to_string()));
                }
                return None;
            }
            let letters: Vec<char> = line.chars().filter(|c| c.is_alphabetic()).collect();
            let all_caps = letters.len() >= 2 && letters.iter().all(|c| c.is_uppercase());
            if all_caps && line.chars().count() <= 60 && line.split_whitespace().count() <= 8 {
                return Some((1, line.to_string()));
            }
            None
        }
    }
}

struct FlatSection {
    level: usize,
    heading: String,
    body: Vec<String>,
}

fn join_body(lines: &[String]) -> String {
    lines.join("\n").trim().to_string()
}

fn build_tree(flat: Vec<FlatSection>) -> Vec<Section> {
    // Stack of open sections; depths along the stack are 1..=len.
    let mut roots: Vec<Section> = Vec::new();
    let mut stack: Vec<Section> = Vec::new();
    fn close_top(stack: &mut Vec<Section>, roots: &mut Vec<Section>) {
        let done = stack.pop().expect("non-empty stack");
        match stack.last_mut() {
            Some(parent) => parent.children.push(done),
            None => roots.push(done),
        }
    }
    for f in flat {
        while stack.last().is_some_and(|top| top.depth >= f.level) {
            close_top(&mut stack, &mut roots);
        }
        let depth = stack.len() + 1;
        stack.push(Section {
            heading: f.heading,
            depth,
            body: join_body(&f.body),
            children: Vec::new(),
        });
    }
    while !stack.is_empty() {
        close_top(&mut stack, &mut roots);
    }
    roots
}

fn label_is(heading: &str, names: &[&str]) -> bool {
    let h = heading.trim().trim_end_matches(':').trim().to_lowercase();
    names.contains(&h.as_str())
}

/// Parses pre-extracted paper text into a [`PaperDocument`].
pub fn parse_document(source: &str, format: SourceFormat) -> Result<PaperDocument, CorpusError> {
    let cleaned = clean_text(source);
    if cleaned.trim().is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    let lines: Vec<&str> = cleaned.split('\n').collect();
    let mut pos = lines.iter().position(|l| !l.trim().is_empty()).unwrap_or(0);

    let header = if header_key(lines[pos].trim()).is_some() {
        let end = lines[pos..]
            .iter()
            .position(|l| l.trim().is_empty())
            .map_or(lines.len(), |off| pos + off);
        let block: Vec<&str> = lines[pos..end].iter().map(|l| l.trim()).collect();
        pos = end;
        parse_header(&block)?
    } else {
        Header::default()
    };

    let mut preamble: Vec<String> = Vec::new();
    let mut flat: Vec<FlatSection> = Vec::new();
    for line in &lines[pos..] {
        if let Some((level, heading)) = detect_heading(line, format) {
            flat.push(FlatSection { level, heading, body: Vec::new() });
        } else {
            let target = match flat.last_mut() {
                Some(f) => &mut f.body,
                None => &mut preamble,
            };
            target.push(line.trim_end().to_string());
        }
    }

    let mut abstract_text = String::new();
    let preamble = join_body(&preamble);
    if let Some(m) = ABSTRACT_LABEL.find(&preamble) {
        abstract_text = preamble[m.end()..].trim().to_string();
    } else if !preamble.is_empty() {
        flat.insert(
            0,
            FlatSection {
                level: 1,
                heading: FRONT_MATTER.to_string(),
                body: vec![preamble],
            },
        );
    }

    let mut sections = Vec::new();
    let mut references = Vec::new();
    for s in build_tree(flat) {
        if s.children.is_empty() && abstract_text.is_empty() && label_is(&s.heading, &["abstract"]) {
            abstract_text = s.body;
        } else if s.children.is_empty() && label_is(&s.heading, &["references", "bibliography"]) {
            references.extend(
                s.body
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from),
            );
        } else {
            sections.push(s);
        }
    }

    let title = match header.title {
        Some(t) => t,
        None => lines[pos..]
            .iter()
            .map(|l| l.trim())
            .find(|l| !l.is_empty())
            .map(|l| {
                detect_heading(l, format)
                    .map_or_else(|| l.to_string(), |(_, h)| h)
                    .chars()
                    .take(200)
                    .collect::<String>()
            })
            .unwrap_or_else(|| "Untitled".to_string()),
    };

    let mut doc = PaperDocument {
        doc_id: String::new(),
        title,
        authors: header.authors,
        institutions: header.institutions,
        venue: header.venue,
        year: header.year,
        language: Language::En,
        abstract_text,
        domains: header.domains,
        sections,
        references,
        source_uri: header.source,
    };
    doc.language = header.language.unwrap_or_else(|| {
        let mut all = format!("{}\n{}", doc.title, doc.abstract_text);
        for (_, s) in doc.sections_preorder() {
            all.push('\n');
            all.push_str(&s.body);
        }
        Language::detect(&all)
    });
    doc.doc_id = doc.compute_doc_id();
    Ok(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkPolicy {
    pub max_tokens: usize,
    pub overlap_tokens: usize,
    pub min_tokens: usize,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            overlap_tokens: 64,
            min_tokens: 32,
        }
    }
}

impl ChunkPolicy {
    pub fn new(max_tokens: usize, overlap_tokens: usize, min_tokens: usize) -> Result<Self, CorpusError> {
        let p = Self {
            max_tokens,
            overlap_tokens,
            min_tokens,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.max_tokens == 0 || self.overlap_tokens >= self.max_tokens {
            return Err(CorpusError::InvalidPolicy(format!(
                "need 0 <= overlap ({}) < max ({})",
                self.overlap_tokens, self.max_tokens
            )));
        }
        if self.min_tokens > self.max_tokens {
            return Err(CorpusError::InvalidPolicy(format!(
                "min ({}) exceeds max ({})",
                self.min_tokens, self.max_tokens
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub section_path: Vec<String>,
    /// Byte offsets into the section body, always on char boundaries.
    pub char_span: (usize, usize),
    pub text: String,
    pub token_count: usize,
}

fn ends_sentence(token: &str, next_is_gap: bool) -> bool {
    let Some(last) = token.chars().last() else {
        return false;
    };
    match last {
        '.' | '!' | '?' => next_is_gap,
        '。' | '！' | '？' => true,
        _ => false,
    }
}

/// Token windows `[start, end)` for one section body.
pub(crate) fn plan_windows(boundary_after: &[bool], policy: &ChunkPolicy) -> Vec<(usize, usize)> {
    let n = boundary_after.len();
    let (max, overlap, min) = (policy.max_tokens, policy.overlap_tokens, policy.min_tokens);
    let mut windows = Vec::new();
    if n == 0 {
        return windows;
    }
    let mut start = 0;
    loop {
        if n - start <= max {
            windows.push((start, n));
            return windows;
        }
        let mut hi = start + max;
        // Leave at least `min` fresh tokens for the final window.
        if n - min > start + overlap && n - min < hi {
            hi = n - min;
        }
        let end = (start + overlap + 1..=hi)
            .rev()
            .find(|&e| boundary_after[e - 1] && e - start >= min)
            .unwrap_or(hi);
        windows.push((start, end));
        start = end - overlap;
    }
}

/// Splits every section into overlapping, section-bounded chunks.
pub fn split_into_chunks(doc: &PaperDocument, policy: &ChunkPolicy) -> Result<Vec<Chunk>, CorpusError> {
    policy.validate()?;
    let mut chunks = Vec::new();
    for (ordinal, (path, section)) in doc.sections_preorder().into_iter().enumerate() {
        let body = section.body.as_str();
        let spans = text::token_spans(body);
        let boundary_after: Vec<bool> = spans
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let gap = spans.get(i + 1).is_none_or(|next| next.start > r.end);
                ends_sentence(&body[r.clone()], gap)
            })
            .collect();
        for (s, e) in plan_windows(&boundary_after, policy) {
            let from = if s == 0 { 0 } else { spans[s].start };
            let to = if e == spans.len() { body.len() } else { spans[e].start };
            let ordinal = ordinal.to_string();
            let (from_s, to_s) = (from.to_string(), to.to_string());
            chunks.push(Chunk {
                chunk_id: text::short_hash(&[&doc.doc_id, &ordinal, &from_s, &to_s]),
                doc_id: doc.doc_id.clone(),
                section_path: path.clone(),
                char_span: (from, to),
                text: body[from..to].to_string(),
                token_count: e - s,
            });
        }
    }
    Ok(chunks)
}

/// Rebuilds a section body from its chunks by dropping each chunk's leading
/// overlap with the previous one.
pub fn reconstruct_section(chunks: &[&Chunk]) -> String {
    let mut out = String::new();
    let mut covered = 0;
    for c in chunks {
        let (from, to) = c.char_span;
        if to > covered {
            let skip = covered.saturating_sub(from);
            out.push_str(&c.text[skip..]);
            covered = to;
        }
    }
    out
}
