//! Reading copilot: question routing, retrieval-augmented answers and
//! multi-paper comparison.

use crate::corpus::PaperDocument;
use crate::embedding::{EmbedError, EmbeddingVector};
use crate::library::Library;
use crate::llm::{Backend, BackendError, ChatRequest, PromptLibrary, TemplateError};
use crate::query::{extract_entities, Gazetteer, PluginRegistry, StructuredQuery, LOCAL_PLUGIN};
use crate::retrieval::{RetrievalError, SearchFilter};
use crate::text::token_spans;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::LazyLock;
use thiserror::Error;

pub const DEFAULT_ROUTE_THRESHOLD: f64 = 0.25;
pub const DEFAULT_ANSWER_K: usize = 5;
pub const INSUFFICIENT_CONTEXT: &str = "insufficient context";
pub const MIN_COMPARE: usize = 2;
pub const MAX_COMPARE: usize = 5;
const ABSTRACT_FALLBACK_TOKENS: usize = 150;

#[derive(Debug, Error)]
pub enum ReadingError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("paper {0} has no indexed chunks")]
    NoChunks(String),
    #[error("comparison takes 2 to 5 papers, got {0}")]
    CountOutOfRange(usize),
    #[error("unknown doc_id {0:?}")]
    UnknownDocId(String),
    #[error("doc_id {0:?} listed twice")]
    DuplicateDocId(String),
    #[error("backend failure: {0}")]
    BackendFailure(#[from] BackendError),
    #[error("search plugin failure: {0}")]
    PluginFailure(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

impl From<TemplateError> for ReadingError {
    fn from(e: TemplateError) -> Self {
        Self::BackendFailure(BackendError::Template(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    InPaper,
    OutOfPaper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteSource {
    Backend,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedQuestion {
    pub question: String,
    pub doc_id: String,
    pub route: Route,
    /// Highest cosine between the question and the paper's chunks.
    pub evidence: f64,
    pub decided_by: RouteSource,
}

fn top_headings(paper: &PaperDocument) -> String {
    let hs: Vec<&str> = paper.sections.iter().map(|s| s.heading.as_str()).collect();
    if hs.is_empty() {
        "none".to_string()
    } else {
        hs.join(", ")
    }
}

fn parse_route(reply: &str) -> Option<Route> {
    let word: String = reply
        .split_whitespace()
        .next()?
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_uppercase();
    match word.as_str() {
        "IN" => Some(Route::InPaper),
        "OUT" => Some(Route::OutOfPaper),
        _ => None,
    }
}

/// Highest cosine between `question` and the indexed chunks of `doc_id`.
pub fn route_evidence(question: &str, doc_id: &str, library: &Library) -> Result<f64, ReadingError> {
    let index = library.index();
    let vectors: Vec<&EmbeddingVector> = library
        .chunks_of(doc_id)
        .iter()
        .filter_map(|c| index.get(&c.chunk_id).map(|e| &e.vector))
        .collect();
    if vectors.is_empty() {
        return Err(ReadingError::NoChunks(doc_id.to_string()));
    }
    let q = match library.embed(question) {
        Ok(q) => q,
        Err(EmbedError::EmptyInput) => return Ok(0.0),
        Err(e) => return Err(e.into()),
    };
    Ok(vectors.iter().map(|v| q.cosine(v)).fold(-1.0, f64::max))
}

/// Asks the backend for IN/OUT; anything else (or a failure) falls back to
/// `evidence >= theta`.
pub fn route_question(
    question: &str,
    paper: &PaperDocument,
    library: &Library,
    backend: &dyn Backend,
    prompts: &PromptLibrary,
    theta: f64,
) -> Result<RoutedQuestion, ReadingError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(ReadingError::EmptyQuestion);
    }
    let evidence = route_evidence(question, &paper.doc_id, library)?;
    let headings = top_headings(paper);
    let backend_route = prompts
        .render(
            "route",
            [("title", paper.title.as_str()), ("sections", headings.as_str()), ("question", question)],
        )
        .map_err(BackendError::from)
        .and_then(|p| backend.complete(&ChatRequest::user(p)));
    let decided = match backend_route {
        Ok(c) => parse_route(&c.content),
        Err(e) => {
            tracing::warn!(error = %e, "routing prompt failed; using similarity threshold");
            None
        }
    };
    let (route, decided_by) = match decided {
        Some(r) => (r, RouteSource::Backend),
        None if evidence >= theta => (Route::InPaper, RouteSource::Threshold),
        None => (Route::OutOfPaper, RouteSource::Threshold),
    };
    Ok(RoutedQuestion {
        question: question.to_string(),
        doc_id: paper.doc_id.clone(),
        route,
        evidence,
        decided_by,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub cited_chunk_ids: Vec<String>,
    pub retrieved_chunk_ids: Vec<String>,
    pub route: Route,
    pub degraded: bool,
}

pub struct ReadingDeps<'a> {
    pub library: &'a Library,
    pub backend: &'a dyn Backend,
    pub prompts: &'a PromptLibrary,
    pub plugins: &'a PluginRegistry,
}

struct Segment {
    chunk_id: String,
    label: String,
    text: String,
}

fn retrieve(rq: &RoutedQuestion, deps: &ReadingDeps<'_>, k: usize) -> Result<Vec<Segment>, ReadingError> {
    let chunk_ids: Vec<String> = match rq.route {
        Route::InPaper => {
            let vector = match deps.library.embed(&rq.question) {
                Ok(v) => v,
                Err(EmbedError::EmptyInput) => return Ok(Vec::new()),
                Err(e) => return Err(e.into()),
            };
            let filter = SearchFilter {
                doc_ids: vec![rq.doc_id.clone()],
                ..SearchFilter::default()
            };
            deps.library
                .index()
                .hybrid_search(&rq.question, &vector, &filter, k)?
                .into_iter()
                .map(|h| h.chunk_id)
                .collect()
        }
        Route::OutOfPaper => {
            let plugin = deps
                .plugins
                .get(LOCAL_PLUGIN)
                .ok_or_else(|| ReadingError::PluginFailure(format!("no {LOCAL_PLUGIN} plugin registered")))?;
            let keywords = extract_entities(&rq.question, &Gazetteer::default())
                .map(|sq| sq.keywords)
                .unwrap_or_default();
            if keywords.is_empty() {
                return Ok(Vec::new());
            }
            let sq = StructuredQuery {
                keywords,
                ..StructuredQuery::default()
            };
            // Over-fetch so dropping the paper's own chunks still leaves k.
            let own: BTreeSet<String> = deps.library.chunks_of(&rq.doc_id).into_iter().map(|c| c.chunk_id).collect();
            plugin
                .execute(&sq, k + own.len())
                .map_err(|e| ReadingError::PluginFailure(e.message))?
                .into_iter()
                .map(|h| h.chunk_id)
                .filter(|id| !own.contains(id))
                .take(k)
                .collect()
        }
    };
    Ok(chunk_ids
        .into_iter()
        .filter_map(|id| {
            let chunk = deps.library.chunk(&id)?;
            let title = deps.library.paper(&chunk.doc_id).map(|p| p.title.clone()).unwrap_or_default();
            Some(Segment {
                label: format!("{} / {}", title, chunk.section_path.join(" > ")),
                text: chunk.text,
                chunk_id: id,
            })
        })
        .collect())
}

static SEGMENT_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[S(\d+)\]").unwrap());

/// Chunk ids named by `[Sn]` markers, in first-mention order; markers
/// outside `1..=retrieved.len()` are ignored.
pub fn cited_segments(text: &str, retrieved: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in SEGMENT_MARKER.captures_iter(text) {
        let Ok(n) = c[1].parse::<usize>() else { continue };
        if let Some(id) = n.checked_sub(1).and_then(|i| retrieved.get(i)) {
            if !out.contains(id) {
                out.push(id.clone());
            }
        }
    }
    out
}

fn answer_with(
    rq: &RoutedQuestion,
    deps: &ReadingDeps<'_>,
    k: usize,
    call: &mut dyn FnMut(&ChatRequest) -> Result<String, BackendError>,
) -> Result<Answer, ReadingError> {
    let segments = retrieve(rq, deps, k)?;
    let retrieved: Vec<String> = segments.iter().map(|s| s.chunk_id.clone()).collect();
    if segments.is_empty() {
        return Ok(Answer {
            text: INSUFFICIENT_CONTEXT.to_string(),
            cited_chunk_ids: Vec::new(),
            retrieved_chunk_ids: retrieved,
            route: rq.route,
            degraded: true,
        });
    }
    let block = segments
        .iter()
        .enumerate()
        .map(|(i, s)| format!("[S{}] ({})\n{}", i + 1, s.label, s.text))
        .collect::<Vec<_>>()
        .join("\n\n");
    let prompt = deps
        .prompts
        .render("read_answer", [("segments", block.as_str()), ("question", rq.question.as_str())])?;
    let text = call(&ChatRequest::user(prompt))?;
    Ok(Answer {
        cited_chunk_ids: cited_segments(&text, &retrieved),
        text,
        retrieved_chunk_ids: retrieved,
        route: rq.route,
        degraded: false,
    })
}

/// Retrieves up to `k` segments for the routed question and asks the
/// backend to answer from them, citing `[Sn]`.
pub fn answer_question(rq: &RoutedQuestion, deps: &ReadingDeps<'_>, k: usize) -> Result<Answer, ReadingError> {
    answer_with(rq, deps, k, &mut |req| Ok(deps.backend.complete(req)?.content))
}

/// Like [`answer_question`], forwarding backend increments to `on_delta`.
pub fn answer_question_streaming(
    rq: &RoutedQuestion,
    deps: &ReadingDeps<'_>,
    k: usize,
    on_delta: &mut dyn FnMut(&str),
) -> Result<Answer, ReadingError> {
    answer_with(rq, deps, k, &mut |req| {
        let mut streamed = req.clone();
        streamed.stream = true;
        Ok(deps.backend.complete_streaming(&streamed, on_delta)?.content)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperSummary {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub contributions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub doc_id: String,
    pub title: String,
    pub approach: String,
    pub advantages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub per_paper: Vec<PaperSummary>,
    pub table: Vec<ComparisonRow>,
    pub similarities: Vec<String>,
    pub differences: Vec<String>,
}

/// The abstract, or the first 150 tokens of the first nonempty section.
pub fn paper_abstract(paper: &PaperDocument) -> String {
    if !paper.abstract_text.trim().is_empty() {
        return paper.abstract_text.clone();
    }
    let Some((_, section)) = paper.sections_preorder().into_iter().find(|(_, s)| !s.body.trim().is_empty()) else {
        return String::new();
    };
    let spans = token_spans(&section.body);
    match spans.get(ABSTRACT_FALLBACK_TOKENS - 1) {
        Some(last) if spans.len() > ABSTRACT_FALLBACK_TOKENS => section.body[..last.end].to_string(),
        _ => section.body.trim().to_string(),
    }
}

/// Values of lines starting with `prefix`, in order.
fn prefixed_lines(reply: &str, prefix: &str) -> Vec<String> {
    reply
        .lines()
        .filter_map(|l| l.trim().strip_prefix(prefix))
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect()
}

/// Validates the selection, extracts contributions per paper, then asks for
/// similarities and differences across all of them.
pub fn compare_papers(
    doc_ids: &[String],
    library: &Library,
    backend: &dyn Backend,
    prompts: &PromptLibrary,
) -> Result<ComparisonReport, ReadingError> {
    if !(MIN_COMPARE..=MAX_COMPARE).contains(&doc_ids.len()) {
        return Err(ReadingError::CountOutOfRange(doc_ids.len()));
    }
    let mut seen = BTreeSet::new();
    for id in doc_ids {
        if !seen.insert(id) {
            return Err(ReadingError::DuplicateDocId(id.clone()));
        }
    }
    let papers = doc_ids
        .iter()
        .map(|id| library.paper(id).ok_or_else(|| ReadingError::UnknownDocId(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;

    let mut per_paper = Vec::new();
    let mut table = Vec::new();
    for p in &papers {
        let abstract_text = paper_abstract(p);
        let prompt = prompts.render(
            "extract_contrib",
            [("title", p.title.as_str()), ("abstract", abstract_text.as_str())],
        )?;
        let reply = backend.complete(&ChatRequest::user(prompt))?.content;
        per_paper.push(PaperSummary {
            doc_id: p.doc_id.clone(),
            title: p.title.clone(),
            abstract_text,
            contributions: prefixed_lines(&reply, "CONTRIB:"),
        });
        table.push(ComparisonRow {
            doc_id: p.doc_id.clone(),
            title: p.title.clone(),
            approach: prefixed_lines(&reply, "APPROACH:").into_iter().next().unwrap_or_default(),
            advantages: prefixed_lines(&reply, "ADVANTAGE:"),
        });
    }

    let summaries = per_paper
        .iter()
        .zip(&table)
        .enumerate()
        .map(|(i, (s, row))| {
            format!(
                "Paper {}: {}\nAbstract: {}\nContributions: {}\nApproach: {}\nAdvantages: {}",
                i + 1,
                s.title,
                s.abstract_text,
                s.contributions.join("; "),
                row.approach,
                row.advantages.join("; ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    let reply = backend
        .complete(&ChatRequest::user(prompts.render("compare_summary", [("summaries", summaries.as_str())])?))?
        .content;
    Ok(ComparisonReport {
        per_paper,
        table,
        similarities: prefixed_lines(&reply, "SIMILARITY:"),
        differences: prefixed_lines(&reply, "DIFFERENCE:"),
    })
}

fn cell(text: &str) -> String {
    text.replace('|', "\\|").replace('\n', " ")
}

impl ComparisonReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Paper | Approach | Advantages |\n| --- | --- | --- |\n");
        for row in &self.table {
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                cell(&row.title),
                cell(&row.approach),
                cell(&row.advantages.join("; "))
            ));
        }
        for (heading, items) in [("Similarities", &self.similarities), ("Differences", &self.differences)] {
            out.push_str(&format!("\n## {heading}\n\n"));
            if items.is_empty() {
                out.push_str("(none)\n");
            }
            for item in items {
                out.push_str(&format!("- {item}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn route_tokens() {
        assert_eq!(parse_route("IN"), Some(Route::InPaper));
        assert_eq!(parse_route(" out.\nbecause"), Some(Route::OutOfPaper));
        assert_eq!(parse_route("maybe"), None);
        assert_eq!(parse_route(""), None);
    }

    #[test]
    fn segment_markers_map_to_retrieved() {
        let ids = vec!["a".to_string(), "b".to_string()];
        assert_eq!(cited_segments("Per [S1], yes.", &ids), vec!["a"]);
        assert_eq!(cited_segments("[S2] [S9] [S0] [S2] [S1]", &ids), vec!["b", "a"]);
        assert!(cited_segments("[S1]", &[]).is_empty());
    }

    #[test]
    fn prefixed_line_parsing() {
        let reply = "CONTRIB: a\nnoise\n  CONTRIB: b \nAPPROACH: x\nADVANTAGE:\n";
        assert_eq!(prefixed_lines(reply, "CONTRIB:"), vec!["a", "b"]);
        assert_eq!(prefixed_lines(reply, "APPROACH:"), vec!["x"]);
        assert!(prefixed_lines(reply, "ADVANTAGE:").is_empty());
    }
}
