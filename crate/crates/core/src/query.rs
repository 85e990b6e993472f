//! Query rewriting, gazetteer-based entity extraction and search-plugin
//! dispatch.

use crate::corpus::clean_text;
use crate::library::Library;
use crate::llm::{Backend, ChatRequest, PromptLibrary};
use crate::retrieval::{SearchFilter, SearchHit};
use crate::text::{fold, is_cjk, is_stopword, PhraseMatcher};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::ops::Range;
use std::path::Path;
use std::sync::{Arc, LazyLock};
use thiserror::Error;

pub const SCHOLAR_PLUGIN: &str = "scholar-index";
pub const LOCAL_PLUGIN: &str = "local-index";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("no registered plugin serves this query")]
    NoPluginMatched,
    #[error("k must be at least 1")]
    InvalidK,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GazetteerError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate {kind} entry {phrase:?}")]
    Duplicate { kind: &'static str, phrase: String },
    #[error("empty {0} entry")]
    Empty(&'static str),
    #[error("cannot read gazetteer: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Scholar,
    Institution,
    Domain,
}

impl EntityKind {
    fn label(self) -> &'static str {
        match self {
            Self::Scholar => "scholar",
            Self::Institution => "institution",
            Self::Domain => "domain",
        }
    }
}

/// Phrase lists for deterministic entity extraction.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<(EntityKind, String)>,
    matcher: PhraseMatcher,
}

impl Gazetteer {
    pub fn new<S: AsRef<str>>(scholars: &[S], institutions: &[S], domains: &[S]) -> Result<Self, GazetteerError> {
        let mut entries = Vec::new();
        for (kind, list) in [
            (EntityKind::Scholar, scholars),
            (EntityKind::Institution, institutions),
            (EntityKind::Domain, domains),
        ] {
            for p in list {
                entries.push((kind, p.as_ref().trim().to_string()));
            }
        }
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<(EntityKind, String)>) -> Result<Self, GazetteerError> {
        let mut seen = HashSet::new();
        for (kind, phrase) in &entries {
            if phrase.is_empty() {
                return Err(GazetteerError::Empty(kind.label()));
            }
            if !seen.insert((*kind, fold(phrase))) {
                return Err(GazetteerError::Duplicate {
                    kind: kind.label(),
                    phrase: phrase.clone(),
                });
            }
        }
        // Stable order: kind priority, then phrase, so the matcher's
        // equal-length tie-break never depends on input order.
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| fold(&a.1).cmp(&fold(&b.1))));
        let matcher = PhraseMatcher::new(&entries.iter().map(|(_, p)| p.as_str()).collect::<Vec<_>>());
        Ok(Self { entries, matcher })
    }

    /// TSV rows `type<TAB>phrase`, type in {scholar, institution, domain}.
    /// Blank lines and `#` comments are skipped.
    pub fn parse_tsv(raw: &str) -> Result<Self, GazetteerError> {
        let mut entries = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: &str| GazetteerError::Parse {
                line: i + 1,
                message: message.to_string(),
            };
            let (kind, phrase) = line.split_once('\t').ok_or_else(|| err("expected two tab-separated columns"))?;
            let kind = match kind.trim() {
                "scholar" => EntityKind::Scholar,
                "institution" => EntityKind::Institution,
                "domain" => EntityKind::Domain,
                other => return Err(err(&format!("unknown type {other:?}"))),
            };
            entries.push((kind, phrase.trim().to_string()));
        }
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self, GazetteerError> {
        let raw = std::fs::read_to_string(path).map_err(|e| GazetteerError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_tsv(&raw)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructuredQuery {
    pub scholars: Vec<String>,
    pub institutions: Vec<String>,
    pub years: Vec<i32>,
    pub year_ranges: Vec<(Option<i32>, Option<i32>)>,
    pub domains: Vec<String>,
    pub keywords: Vec<String>,
    pub free_text: String,
}

impl StructuredQuery {
    /// Smallest year range covering every extracted year and range.
    pub fn year_span(&self) -> (Option<i32>, Option<i32>) {
        if self.years.is_empty() && self.year_ranges.is_empty() {
            return (None, None);
        }
        let mut lo: Option<i32> = None;
        let mut hi: Option<i32> = None;
        let mut open_lo = false;
        let mut open_hi = false;
        let mut widen = |l: Option<i32>, h: Option<i32>| {
            match l {
                Some(l) => lo = Some(lo.map_or(l, |x| x.min(l))),
                None => open_lo = true,
            }
            match h {
                Some(h) => hi = Some(hi.map_or(h, |x| x.max(h))),
                None => open_hi = true,
            }
        };
        for &y in &self.years {
            widen(Some(y), Some(y));
        }
        for &(l, h) in &self.year_ranges {
            widen(l, h);
        }
        (lo.filter(|_| !open_lo), hi.filter(|_| !open_hi))
    }

    /// Domains, keywords and residual text joined for retrieval.
    pub fn search_text(&self) -> String {
        let mut parts: Vec<&str> = self.domains.iter().map(String::as_str).collect();
        parts.extend(self.keywords.iter().map(String::as_str));
        let mut text = parts.join(" ");
        if text.is_empty() {
            text = self.free_text.clone();
        }
        text
    }

    pub fn has_people(&self) -> bool {
        !self.scholars.is_empty() || !self.institutions.is_empty()
    }

    pub fn has_topic(&self) -> bool {
        !self.domains.is_empty() || !self.keywords.is_empty() || !self.free_text.is_empty()
    }
}

/// How each character of a query was consumed by extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpanKind {
    Entity(EntityKind),
    Year,
    Keyword,
    /// Stopwords, whitespace and punctuation.
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribution {
    pub span: Range<usize>,
    pub kind: SpanKind,
}

static SINCE_YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bsince\s+(\d{4})\b").unwrap());
static YEAR_RANGE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d{4})\s*[-–]\s*(\d{4})\b").unwrap());
static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d{4})\b").unwrap());
static ZH_STOP_MATCHER: LazyLock<PhraseMatcher> = LazyLock::new(|| {
    PhraseMatcher::new(&[
        "的", "了", "是", "在", "和", "与", "及", "或", "有", "也", "就", "都", "而", "被", "把", "对", "从", "中",
        "之", "其", "这", "那", "哪些", "什么", "如何", "关于", "我们", "你们", "他们", "吗", "呢", "吧", "？", "，",
        "。", "！", "、",
    ])
});

fn valid_year(y: i32) -> bool {
    (1900..=2100).contains(&y)
}

fn overlaps(claimed: &[Range<usize>], r: &Range<usize>) -> bool {
    claimed.iter().any(|c| c.start < r.end && r.start < c.end)
}

struct Extraction {
    query: StructuredQuery,
    spans: Vec<Attribution>,
}

fn push_unique(list: &mut Vec<String>, value: &str) {
    if !list.iter().any(|v| fold(v) == fold(value)) {
        list.push(value.to_string());
    }
}

fn run_extraction(query: &str, gaz: &Gazetteer) -> Extraction {
    let mut sq = StructuredQuery::default();
    let mut spans: Vec<Attribution> = Vec::new();
    let mut claimed: Vec<Range<usize>> = Vec::new();

    for m in gaz.matcher.find_all(query) {
        let (kind, phrase) = &gaz.entries[m.phrase];
        let list = match kind {
            EntityKind::Scholar => &mut sq.scholars,
            EntityKind::Institution => &mut sq.institutions,
            EntityKind::Domain => &mut sq.domains,
        };
        push_unique(list, phrase);
        spans.push(Attribution {
            span: m.span.clone(),
            kind: SpanKind::Entity(*kind),
        });
        claimed.push(m.span);
    }

    for caps in SINCE_YEAR.captures_iter(query) {
        let whole = caps.get(0).expect("match").range();
        let y: i32 = caps[1].parse().expect("four digits");
        if valid_year(y) && !overlaps(&claimed, &whole) {
            sq.year_ranges.push((Some(y), None));
            spans.push(Attribution {
                span: whole.clone(),
                kind: SpanKind::Year,
            });
            claimed.push(whole);
        }
    }
    for caps in YEAR_RANGE.captures_iter(query) {
        let whole = caps.get(0).expect("match").range();
        let a: i32 = caps[1].parse().expect("four digits");
        let b: i32 = caps[2].parse().expect("four digits");
        if valid_year(a) && valid_year(b) && a <= b && !overlaps(&claimed, &whole) {
            sq.year_ranges.push((Some(a), Some(b)));
            spans.push(Attribution {
                span: whole.clone(),
                kind: SpanKind::Year,
            });
            claimed.push(whole);
        }
    }
    for caps in YEAR.captures_iter(query) {
        let whole = caps.get(0).expect("match").range();
        let y: i32 = caps[1].parse().expect("four digits");
        if valid_year(y) && !overlaps(&claimed, &whole) {
            if !sq.years.contains(&y) {
                sq.years.push(y);
            }
            spans.push(Attribution {
                span: whole.clone(),
                kind: SpanKind::Year,
            });
            claimed.push(whole);
        }
    }

    // Everything unclaimed splits into keyword tokens and the rest.
    let mut free = String::new();
    let mut i = 0;
    let chars: Vec<(usize, char)> = query.char_indices().collect();
    let end_of = |idx: usize| chars.get(idx).map_or(query.len(), |&(b, _)| b);
    while i < chars.len() {
        let (b, c) = chars[i];
        if let Some(r) = claimed.iter().find(|r| r.start == b) {
            free.push(' ');
            while i < chars.len() && chars[i].0 < r.end {
                i += 1;
            }
            continue;
        }
        let word_like = |c: char| c.is_alphanumeric();
        if word_like(c) {
            let cjk = is_cjk(c);
            while i < chars.len()
                && word_like(chars[i].1)
                && is_cjk(chars[i].1) == cjk
                && !claimed.iter().any(|r| r.start == chars[i].0)
            {
                i += 1;
            }
            let span = b..end_of(i);
            let token = &query[span.clone()];
            free.push_str(token);
            if cjk {
                attribute_cjk_run(token, span.start, &mut sq, &mut spans);
            } else if is_stopword(token) {
                spans.push(Attribution { span, kind: SpanKind::Other });
            } else {
                push_unique(&mut sq.keywords, &token.to_lowercase());
                spans.push(Attribution { span, kind: SpanKind::Keyword });
            }
        } else {
            free.push(c);
            spans.push(Attribution {
                span: b..b + c.len_utf8(),
                kind: SpanKind::Other,
            });
            i += 1;
        }
    }
    sq.free_text = free.split_whitespace().collect::<Vec<_>>().join(" ");
    spans.sort_by_key(|a| a.span.start);
    Extraction { query: sq, spans }
}

fn attribute_cjk_run(run: &str, offset: usize, sq: &mut StructuredQuery, spans: &mut Vec<Attribution>) {
    let mut pos = 0;
    let emit_keyword = |from: usize, to: usize, sq: &mut StructuredQuery, spans: &mut Vec<Attribution>| {
        if from < to {
            push_unique(&mut sq.keywords, &run[from..to]);
            spans.push(Attribution {
                span: offset + from..offset + to,
                kind: SpanKind::Keyword,
            });
        }
    };
    for m in ZH_STOP_MATCHER.find_all(run) {
        emit_keyword(pos, m.span.start, sq, spans);
        spans.push(Attribution {
            span: offset + m.span.start..offset + m.span.end,
            kind: SpanKind::Other,
        });
        pos = m.span.end;
    }
    emit_keyword(pos, run.len(), sq, spans);
}

/// Assigns gazetteer phrases (leftmost-longest, case-insensitive), years
/// and year ranges, then keywords from the remaining non-stopword tokens.
pub fn extract_entities(query: &str, gaz: &Gazetteer) -> Result<StructuredQuery, QueryError> {
    if query.trim().is_empty() {
        return Err(QueryError::EmptyQuery);
    }
    Ok(run_extraction(query, gaz).query)
}

/// Per-character attribution behind [`extract_entities`], sorted by start.
pub fn attribute_spans(query: &str, gaz: &Gazetteer) -> Vec<Attribution> {
    run_extraction(query, gaz).spans
}

const QUOTES: &[char] = &['"', '\'', '`', '“', '”', '‘', '’', '「', '」', '《', '》'];

/// Asks the backend for a retrieval-friendly rewrite. Falls back to the
/// cleaned original on backend failure or empty output.
pub fn rewrite_query(user_query: &str, backend: &dyn Backend, prompts: &PromptLibrary) -> Result<String, QueryError> {
    let trimmed = user_query.trim();
    if trimmed.is_empty() {
        return Err(QueryError::EmptyQuery);
    }
    let fallback = || clean_text(trimmed).trim().to_string();
    let prompt = match prompts.render("query_rewrite", [("query", trimmed)]) {
        Ok(p) => p,
        Err(e) => {
            tracing::warn!(error = %e, "query_rewrite template unusable; using original query");
            return Ok(fallback());
        }
    };
    match backend.complete(&ChatRequest::user(prompt)) {
        Ok(c) => {
            let out = c.content.trim().trim_matches(|ch: char| QUOTES.contains(&ch) || ch.is_whitespace());
            if out.is_empty() {
                Ok(fallback())
            } else {
                Ok(out.to_string())
            }
        }
        Err(e) => {
            tracing::warn!(error = %e, "query rewrite failed; using original query");
            Ok(fallback())
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[error("plugin {plugin} failed: {message}")]
pub struct PluginError {
    pub plugin: String,
    pub message: String,
}

pub trait SearchPlugin: Send + Sync {
    fn name(&self) -> &str;
    fn execute(&self, query: &StructuredQuery, k: usize) -> Result<Vec<SearchHit>, PluginError>;
}

/// Plugins keyed by unique name; iteration is in name order.
#[derive(Clone, Default)]
pub struct PluginRegistry {
    plugins: BTreeMap<String, Arc<dyn SearchPlugin>>,
}

impl PluginRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `plugin`; returns false (and keeps the old one) on a name
    /// clash.
    pub fn register(&mut self, plugin: Arc<dyn SearchPlugin>) -> bool {
        let name = plugin.name().to_string();
        if self.plugins.contains_key(&name) {
            return false;
        }
        self.plugins.insert(name, plugin);
        true
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn SearchPlugin>> {
        self.plugins.get(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.plugins.keys().map(String::as_str).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.plugins.is_empty()
    }

    /// Both library-backed plugins over one shared library.
    pub fn with_library(library: Arc<Library>) -> Self {
        let mut reg = Self::new();
        reg.register(Arc::new(LocalIndexPlugin::new(Arc::clone(&library))));
        reg.register(Arc::new(ScholarIndexPlugin::new(library)));
        reg
    }
}

pub type DispatchResult = BTreeMap<String, Result<Vec<SearchHit>, PluginError>>;

/// Routes a structured query: people fields go to `scholar-index`, topic
/// fields to `local-index`. Routed plugins run concurrently; results are
/// returned per plugin, unmerged, in name order.
pub fn dispatch(sq: &StructuredQuery, registry: &PluginRegistry, k: usize) -> Result<DispatchResult, QueryError> {
    if k == 0 {
        return Err(QueryError::InvalidK);
    }
    let mut routed: Vec<&Arc<dyn SearchPlugin>> = Vec::new();
    if sq.has_people() {
        routed.extend(registry.get(SCHOLAR_PLUGIN));
    }
    if sq.has_topic() {
        routed.extend(registry.get(LOCAL_PLUGIN));
    }
    if routed.is_empty() {
        return Err(QueryError::NoPluginMatched);
    }
    let results: Vec<(String, Result<Vec<SearchHit>, PluginError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = routed
            .iter()
            .map(|p| scope.spawn(move || (p.name().to_string(), p.execute(sq, k))))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("plugin thread panicked"))
            .collect()
    });
    Ok(results.into_iter().collect())
}

/// Hybrid search over the local library on the query's topic fields.
pub struct LocalIndexPlugin {
    library: Arc<Library>,
}

impl LocalIndexPlugin {
    pub fn new(library: Arc<Library>) -> Self {
        Self { library }
    }
}

fn library_search(
    library: &Library,
    plugin: &str,
    text: &str,
    filter: &SearchFilter,
    k: usize,
) -> Result<Vec<SearchHit>, PluginError> {
    let err = |message: String| PluginError {
        plugin: plugin.to_string(),
        message,
    };
    let index = library.index();
    let vector = match library.embed(text) {
        Ok(v) => v,
        Err(crate::embedding::EmbedError::EmptyInput) => return Ok(Vec::new()),
        Err(e) => return Err(err(e.to_string())),
    };
    index
        .hybrid_search(text, &vector, filter, k)
        .map_err(|e| err(e.to_string()))
}

impl SearchPlugin for LocalIndexPlugin {
    fn name(&self) -> &str {
        LOCAL_PLUGIN
    }

    fn execute(&self, query: &StructuredQuery, k: usize) -> Result<Vec<SearchHit>, PluginError> {
        let filter = SearchFilter {
            year_range: query.year_span(),
            ..SearchFilter::default()
        };
        library_search(&self.library, LOCAL_PLUGIN, &query.search_text(), &filter, k)
    }
}

/// Library search restricted to the query's scholars and institutions.
pub struct ScholarIndexPlugin {
    library: Arc<Library>,
}

impl ScholarIndexPlugin {
    pub fn new(library: Arc<Library>) -> Self {
        Self { library }
    }
}

impl SearchPlugin for ScholarIndexPlugin {
    fn name(&self) -> &str {
        SCHOLAR_PLUGIN
    }

    fn execute(&self, query: &StructuredQuery, k: usize) -> Result<Vec<SearchHit>, PluginError> {
        let filter = SearchFilter {
            scholars: query.scholars.clone(),
            institutions: query.institutions.clone(),
            year_range: query.year_span(),
            ..SearchFilter::default()
        };
        let mut text = query.search_text();
        if text.is_empty() {
            text = query.scholars.join(" ");
        }
        library_search(&self.library, SCHOLAR_PLUGIN, &text, &filter, k)
    }
}

/// Returns canned hits (or a canned failure); stands in for external
/// search services in tests.
pub struct StaticPlugin {
    name: String,
    reply: Result<Vec<SearchHit>, String>,
}

impl StaticPlugin {
    pub fn new(name: impl Into<String>, hits: Vec<SearchHit>) -> Self {
        Self {
            name: name.into(),
            reply: Ok(hits),
        }
    }

    pub fn failing(name: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            reply: Err(message.into()),
        }
    }
}

impl SearchPlugin for StaticPlugin {
    fn name(&self) -> &str {
        &self.name
    }

    fn execute(&self, _query: &StructuredQuery, k: usize) -> Result<Vec<SearchHit>, PluginError> {
        match &self.reply {
            Ok(hits) => Ok(hits.iter().take(k).cloned().collect()),
            Err(message) => Err(PluginError {
                plugin: self.name.clone(),
                message: message.clone(),
            }),
        }
    }
}
