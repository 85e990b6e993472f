//! Literature investigation: topic search with a literature-based summary,
//! scholar surveys and clustering-based review generation.

use crate::corpus::PaperDocument;
use crate::embedding::{EmbedError, EmbeddingVector};
use crate::library::Library;
use crate::llm::{Backend, BackendError, ChatRequest, PromptLibrary, TemplateError};
use crate::query::{dispatch, extract_entities, rewrite_query, Gazetteer, PluginRegistry, QueryError, StructuredQuery};
use crate::text::{is_stopword, word_unigrams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, LazyLock};
use thiserror::Error;

pub const REVIEW_PAPER_LIMIT: usize = 30;
const MAX_TOP_KEYWORDS: usize = 10;
const MAX_RECENT_KEYWORDS: usize = 5;
const SUMMARY_SNIPPETS: usize = 5;
const LLOYD_MAX_ITERS: usize = 100;
const KMEANS_RESTARTS: u64 = 8;

#[derive(Debug, Error)]
pub enum InvestigationError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("no papers by {0:?} in the library")]
    ScholarNotFound(String),
    #[error("k = {k} is invalid for {n} items")]
    InvalidK { k: usize, n: usize },
    #[error("a review is limited to a maximum of {limit} papers, got {got}")]
    LimitExceeded { limit: usize, got: usize },
    #[error("no papers selected")]
    EmptySelection,
    #[error("unknown doc_id {0:?}")]
    UnknownDocId(String),
    #[error("backend failure: {0}")]
    BackendFailure(#[from] BackendError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

impl From<TemplateError> for InvestigationError {
    fn from(e: TemplateError) -> Self {
        Self::BackendFailure(BackendError::Template(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub paper_count: usize,
    pub year_histogram: BTreeMap<i32, usize>,
    pub trend_slope: f64,
    pub top_keywords: Vec<(String, f64)>,
    /// Top keywords among the papers of the latest year present.
    pub recent_keywords: Vec<(String, f64)>,
}

/// Least-squares slope of `(year, count)` over every year from the first
/// to the last, absent years counting zero. Zero for fewer than two years.
pub fn trend_slope(histogram: &BTreeMap<i32, usize>) -> f64 {
    let (Some((&lo, _)), Some((&hi, _))) = (histogram.first_key_value(), histogram.last_key_value()) else {
        return 0.0;
    };
    if lo == hi {
        return 0.0;
    }
    let n = (hi - lo + 1) as f64;
    let xs: Vec<f64> = (lo..=hi).map(f64::from).collect();
    let ys: Vec<f64> = (lo..=hi).map(|y| *histogram.get(&y).unwrap_or(&0) as f64).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

fn keyword_terms(doc: &PaperDocument) -> Vec<String> {
    word_unigrams(&doc.title_and_abstract())
        .into_iter()
        .filter(|t| !is_stopword(t) && !t.chars().all(|c| c.is_ascii_digit()))
        .filter(|t| t.chars().count() > 1 || t.chars().any(crate::text::is_cjk))
        .collect()
}

/// TF-IDF over title+abstract unigrams: term frequency summed across
/// `papers`, idf = ln(1 + N/df) against `corpus`.
pub fn tfidf_keywords(papers: &[&PaperDocument], corpus: &[&PaperDocument], limit: usize) -> Vec<(String, f64)> {
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        for t in keyword_terms(doc).into_iter().collect::<BTreeSet<_>>() {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut tf: BTreeMap<String, usize> = BTreeMap::new();
    for doc in papers {
        for t in keyword_terms(doc) {
            *tf.entry(t).or_default() += 1;
        }
    }
    let n = corpus.len().max(1) as f64;
    let mut scored: Vec<(String, f64)> = tf
        .into_iter()
        .map(|(t, c)| {
            let d = df.get(&t).copied().unwrap_or(0).max(1) as f64;
            let score = c as f64 * (1.0 + n / d).ln();
            (t, score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(limit);
    scored
}

pub fn compute_summary_stats(papers: &[&PaperDocument], corpus: &[&PaperDocument]) -> SummaryStats {
    let mut year_histogram = BTreeMap::new();
    for p in papers {
        if let Some(y) = p.year {
            *year_histogram.entry(y).or_insert(0) += 1;
        }
    }
    let latest: Vec<&PaperDocument> = match year_histogram.last_key_value() {
        Some((&y, _)) => papers.iter().copied().filter(|p| p.year == Some(y)).collect(),
        None => Vec::new(),
    };
    SummaryStats {
        paper_count: papers.len(),
        trend_slope: trend_slope(&year_histogram),
        year_histogram,
        top_keywords: tfidf_keywords(papers, corpus, MAX_TOP_KEYWORDS),
        recent_keywords: tfidf_keywords(&latest, corpus, MAX_RECENT_KEYWORDS),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicHit {
    pub doc_id: String,
    pub title: String,
    pub year: Option<i32>,
    pub chunk_id: String,
    pub score: f64,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSearchResult {
    pub rewritten_query: String,
    pub structured: StructuredQuery,
    pub hits: Vec<TopicHit>,
    /// Plugins that failed, with their messages.
    pub plugin_errors: BTreeMap<String, String>,
    pub stats: SummaryStats,
    pub summary: String,
    /// Set when the summary could not be produced.
    pub degraded: bool,
}

pub struct TopicDeps<'a> {
    pub library: &'a Library,
    pub backend: &'a dyn Backend,
    pub prompts: &'a PromptLibrary,
    pub gazetteer: &'a Gazetteer,
    pub plugins: &'a PluginRegistry,
}

fn histogram_text(h: &BTreeMap<i32, usize>) -> String {
    if h.is_empty() {
        return "none".to_string();
    }
    h.iter().map(|(y, c)| format!("{y}: {c}")).collect::<Vec<_>>().join(", ")
}

/// Rewrite, extract, dispatch, merge per paper, then summarize.
pub fn topic_search(user_query: &str, deps: &TopicDeps<'_>, k: usize) -> Result<TopicSearchResult, InvestigationError> {
    let rewritten = rewrite_query(user_query, deps.backend, deps.prompts)?;
    let structured = extract_entities(&rewritten, deps.gazetteer)?;
    let results = dispatch(&structured, deps.plugins, k)?;

    let mut plugin_errors = BTreeMap::new();
    let mut best: BTreeMap<String, TopicHit> = BTreeMap::new();
    for (name, result) in results {
        let hits = match result {
            Ok(h) => h,
            Err(e) => {
                tracing::warn!(plugin = %name, error = %e.message, "search plugin failed");
                plugin_errors.insert(name, e.message);
                continue;
            }
        };
        for hit in hits {
            let Some(doc_id) = deps.library.doc_of_chunk(&hit.chunk_id) else {
                tracing::warn!(plugin = %name, chunk = %hit.chunk_id, "hit outside the library dropped");
                continue;
            };
            let Some(paper) = deps.library.paper(&doc_id) else { continue };
            let candidate = TopicHit {
                doc_id: doc_id.clone(),
                title: paper.title.clone(),
                year: paper.year,
                chunk_id: hit.chunk_id,
                score: hit.score,
                snippet: hit.snippet,
            };
            match best.get(&doc_id) {
                Some(cur) if cur.score > candidate.score || (cur.score == candidate.score && cur.chunk_id <= candidate.chunk_id) => {}
                _ => {
                    best.insert(doc_id, candidate);
                }
            }
        }
    }
    let mut hits: Vec<TopicHit> = best.into_values().collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    hits.truncate(k);

    let hit_papers: Vec<Arc<PaperDocument>> = hits.iter().filter_map(|h| deps.library.paper(&h.doc_id)).collect();
    let corpus = deps.library.papers();
    let stats = compute_summary_stats(
        &hit_papers.iter().map(|p| p.as_ref()).collect::<Vec<_>>(),
        &corpus.iter().map(|p| p.as_ref()).collect::<Vec<_>>(),
    );

    let mut summary = String::new();
    let mut degraded = false;
    if !hits.is_empty() {
        let snippets = hits
            .iter()
            .take(SUMMARY_SNIPPETS)
            .enumerate()
            .map(|(i, h)| {
                let year = h.year.map_or_else(|| "n.d.".to_string(), |y| y.to_string());
                format!("{}. {} ({year}): {}", i + 1, h.title, h.snippet)
            })
            .collect::<Vec<_>>()
            .join("\n");
        let keywords = stats.top_keywords.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>().join(", ");
        let count = stats.paper_count.to_string();
        let hist = histogram_text(&stats.year_histogram);
        let slope = format!("{:.3}", stats.trend_slope);
        let rendered = deps.prompts.render(
            "topic_summary",
            [
                ("query", rewritten.as_str()),
                ("paper_count", count.as_str()),
                ("year_histogram", hist.as_str()),
                ("trend_slope", slope.as_str()),
                ("top_keywords", keywords.as_str()),
                ("snippets", snippets.as_str()),
            ],
        );
        let outcome = rendered
            .map_err(BackendError::from)
            .and_then(|p| deps.backend.complete(&ChatRequest::user(p)));
        match outcome {
            Ok(c) => summary = c.content.trim().to_string(),
            Err(e) => {
                tracing::warn!(error = %e, "summary generation failed; returning hits and stats only");
                degraded = true;
            }
        }
    }
    Ok(TopicSearchResult {
        rewritten_query: rewritten,
        structured,
        hits,
        plugin_errors,
        stats,
        summary,
        degraded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: BTreeMap<String, usize>,
    pub centroids: Vec<EmbeddingVector>,
    /// Sum of squared distances to the assigned (unit) centroid.
    pub objective: f64,
    /// Objective after each Lloyd iteration of the winning restart.
    pub objective_trace: Vec<f64>,
}

impl ClusterAssignment {
    /// Members of each cluster in doc-id order.
    pub fn members(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.k];
        for (id, &c) in &self.labels {
            out[c].push(id.clone());
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn unit(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = dot(&v, &v).sqrt();
    if n <= 1e-12 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

fn objective(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &[usize]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum()
}

fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| chosen.iter().map(|&c| sq_dist(p, &points[c])).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total <= 1e-12 {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        } else {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        };
        chosen.push(next);
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Moves the farthest point of the largest cluster into each empty one.
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], labels: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let largest = (0..k).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).expect("k >= 1");
        let victim = (0..points.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&a, &b| {
                sq_dist(&points[a], &centroids[largest])
                    .total_cmp(&sq_dist(&points[b], &centroids[largest]))
                    .then(b.cmp(&a))
            })
            .expect("largest cluster has members");
        labels[victim] = empty;
        centroids[empty] = points[victim].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], centroids: &mut [Vec<f64>], labels: &[usize]) {
    let dim = points[0].len();
    for (j, c) in centroids.iter_mut().enumerate() {
        let mut sum = vec![0.0; dim];
        for (p, _) in points.iter().zip(labels).filter(|(_, &l)| l == j) {
            sum.iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        if let Some(u) = unit(sum) {
            *c = u;
        }
    }
}

/// Labels, unit centroids and the objective after each iteration.
type LloydRun = (Vec<usize>, Vec<Vec<f64>>, Vec<f64>);

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> LloydRun {
    let mut centroids = seed_centroids(points, k, rng);
    let mut labels = assign(points, &centroids);
    repair_empty(points, &mut centroids, &mut labels);
    update_centroids(points, &mut centroids, &labels);
    let mut trace = vec![objective(points, &centroids, &labels)];
    for _ in 1..LLOYD_MAX_ITERS {
        let mut next = assign(points, &centroids);
        repair_empty(points, &mut centroids, &mut next);
        let fixpoint = next == labels;
        labels = next;
        update_centroids(points, &mut centroids, &labels);
        let obj = objective(points, &centroids, &labels);
        debug_assert!(
            obj <= trace.last().expect("nonempty") + 1e-9,
            "k-means objective increased: {obj} after {:?}",
            trace
        );
        trace.push(obj);
        if fixpoint {
            break;
        }
    }
    (labels, centroids, trace)
}

/// Spherical k-means: k-means++ seeding, Lloyd iterations to an assignment
/// fixpoint (at most 100), unit centroids. Several seeded restarts; the
/// lowest objective wins, earliest restart on ties.
pub fn cluster_papers(
    vectors: &BTreeMap<String, EmbeddingVector>,
    k: usize,
    seed: u64,
) -> Result<ClusterAssignment, InvestigationError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(InvestigationError::InvalidK { k, n });
    }
    let ids: Vec<&String> = vectors.keys().collect();
    let points: Vec<Vec<f64>> = vectors
        .values()
        .map(|v| v.values().iter().map(|&x| f64::from(x)).collect())
        .collect();
    let mut best: Option<LloydRun> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart);
        let run = lloyd(&points, k, &mut rng);
        let better = match &best {
            None => true,
            Some(b) => run.2.last() < b.2.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let (labels, centroids, trace) = best.expect("at least one restart");
    Ok(ClusterAssignment {
        k,
        labels: ids.into_iter().cloned().zip(labels).collect(),
        centroids: centroids
            .into_iter()
            .map(|c| EmbeddingVector::from_raw(c.into_iter().map(|x| x as f32).collect()))
            .collect(),
        objective: *trace.last().expect("nonempty"),
        objective_trace: trace,
    })
}

fn paper_vectors(library: &Library, papers: &[Arc<PaperDocument>]) -> Result<BTreeMap<String, EmbeddingVector>, InvestigationError> {
    papers
        .iter()
        .map(|p| Ok((p.doc_id.clone(), library.embed(&p.title_and_abstract())?)))
        .collect()
}

/// Clusters ordered by size descending, then by earliest member position.
fn ordered_groups(assignment: &ClusterAssignment, order: &[String]) -> Vec<Vec<String>> {
    let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut groups = assignment.members();
    for g in &mut groups {
        g.sort_by_key(|id| pos[id.as_str()]);
    }
    groups.sort_by_key(|g| (std::cmp::Reverse(g.len()), pos[g[0].as_str()]));
    groups
}

fn complete(backend: &dyn Backend, prompt: String) -> Result<String, InvestigationError> {
    Ok(backend.complete(&ChatRequest::user(prompt))?.content)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyGroup {
    pub label: String,
    pub doc_ids: Vec<String>,
    pub titles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScholarSurvey {
    pub scholar: String,
    pub groups: Vec<SurveyGroup>,
}

/// Groups a scholar's papers into research areas, largest first.
pub fn scholar_survey(
    name: &str,
    library: &Library,
    backend: &dyn Backend,
    prompts: &PromptLibrary,
    seed: u64,
) -> Result<ScholarSurvey, InvestigationError> {
    let name = name.trim();
    if name.is_empty() {
        return Err(QueryError::EmptyQuery.into());
    }
    let needle = name.to_lowercase();
    let papers: Vec<Arc<PaperDocument>> = library
        .papers()
        .into_iter()
        .filter(|p| p.authors.iter().any(|a| a.to_lowercase().contains(&needle)))
        .collect();
    if papers.is_empty() {
        return Err(InvestigationError::ScholarNotFound(name.to_string()));
    }
    let k = papers.len().div_ceil(3).min(5);
    let assignment = cluster_papers(&paper_vectors(library, &papers)?, k, seed)?;
    let order: Vec<String> = papers.iter().map(|p| p.doc_id.clone()).collect();
    let by_id: HashMap<&str, &PaperDocument> = papers.iter().map(|p| (p.doc_id.as_str(), p.as_ref())).collect();
    let mut groups = Vec::new();
    for ids in ordered_groups(&assignment, &order) {
        let titles: Vec<String> = ids.iter().map(|id| by_id[id.as_str()].title.clone()).collect();
        let listing = titles.iter().map(|t| format!("- {t}")).collect::<Vec<_>>().join("\n");
        let reply = complete(backend, prompts.render("area_label", [("titles", listing.as_str())])?)?;
        let label = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").to_string();
        groups.push(SurveyGroup { label, doc_ids: ids, titles });
    }
    Ok(ScholarSurvey {
        scholar: name.to_string(),
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSection {
    pub heading: String,
    pub doc_ids: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibEntry {
    pub ref_number: usize,
    pub doc_id: String,
    pub citation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewOutline {
    pub title: String,
    pub introduction: String,
    pub body_sections: Vec<ReviewSection>,
    pub conclusion: String,
    pub bibliography: Vec<BibEntry>,
    /// Citation markers removed because they named no supplied paper.
    pub citation_violations: usize,
}

static CITATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[(\d+(?:\s*,\s*\d+)*)\]").unwrap());
static SPACED_CITATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([ \t]*)\[(\d+(?:\s*,\s*\d+)*)\]").unwrap());

/// Numbers inside `[n]` / `[n, m]` markers, in order of appearance.
pub fn citation_numbers(text: &str) -> Vec<usize> {
    CITATION
        .captures_iter(text)
        .flat_map(|c| {
            c[1].split(',')
                .filter_map(|n| n.trim().parse().ok())
                .collect::<Vec<usize>>()
        })
        .collect()
}

/// Rewrites every marker through `map`; numbers without a mapping are
/// dropped (and counted), empty markers vanish.
fn remap_citations(text: &str, map: &HashMap<usize, usize>, dropped: &mut usize) -> String {
    SPACED_CITATION
        .replace_all(text, |c: &regex::Captures<'_>| {
            let kept: Vec<String> = c[2]
                .split(',')
                .filter_map(|n| {
                    let n: usize = n.trim().parse().ok()?;
                    match map.get(&n) {
                        Some(m) => Some(m.to_string()),
                        None => {
                            *dropped += 1;
                            None
                        }
                    }
                })
                .collect();
            if kept.is_empty() {
                String::new()
            } else {
                format!("{}[{}]", &c[1], kept.join(", "))
            }
        })
        .into_owned()
}

pub fn citation_string(doc: &PaperDocument) -> String {
    let authors = if doc.authors.is_empty() {
        "Anonymous".to_string()
    } else {
        doc.authors.join(", ")
    };
    let year = doc.year.map_or_else(|| "n.d.".to_string(), |y| y.to_string());
    match &doc.venue {
        Some(v) => format!("{authors} ({year}). {}. {v}.", doc.title),
        None => format!("{authors} ({year}). {}.", doc.title),
    }
}

/// Splits a `PREFIX: value` first line off a reply, if present.
fn take_prefixed<'a>(reply: &'a str, prefix: &str) -> (Option<String>, &'a str) {
    let reply = reply.trim_start();
    let (first, rest) = reply.split_once('\n').unwrap_or((reply, ""));
    match first.trim().strip_prefix(prefix) {
        Some(v) => (Some(v.trim().to_string()), rest.trim()),
        None => (None, reply.trim()),
    }
}

/// Clusters the selected papers and asks the backend for an introduction,
/// one section per cluster and a conclusion. References are renumbered by
/// first citation; uncited papers follow in section order.
pub fn generate_review(
    doc_ids: &[String],
    library: &Library,
    backend: &dyn Backend,
    prompts: &PromptLibrary,
    seed: u64,
) -> Result<ReviewOutline, InvestigationError> {
    let mut ids: Vec<String> = Vec::new();
    for id in doc_ids {
        if !ids.contains(id) {
            ids.push(id.clone());
        }
    }
    if ids.is_empty() {
        return Err(InvestigationError::EmptySelection);
    }
    if ids.len() > REVIEW_PAPER_LIMIT {
        return Err(InvestigationError::LimitExceeded {
            limit: REVIEW_PAPER_LIMIT,
            got: ids.len(),
        });
    }
    let papers: Vec<Arc<PaperDocument>> = ids
        .iter()
        .map(|id| library.paper(id).ok_or_else(|| InvestigationError::UnknownDocId(id.clone())))
        .collect::<Result<_, _>>()?;
    // Provisional reference numbers follow the selection order.
    let provisional: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i + 1)).collect();
    let by_id: HashMap<&str, &PaperDocument> = papers.iter().map(|p| (p.doc_id.as_str(), p.as_ref())).collect();
    let year = |d: &PaperDocument| d.year.map_or_else(|| "n.d.".to_string(), |y| y.to_string());

    let k = ids.len().div_ceil(5).min(6);
    let assignment = cluster_papers(&paper_vectors(library, &papers)?, k, seed)?;

    let listing = ids
        .iter()
        .map(|id| {
            let d = by_id[id.as_str()];
            format!("[{}] {} ({})", provisional[id.as_str()], d.title, year(d))
        })
        .collect::<Vec<_>>()
        .join("\n");
    let intro_reply = complete(backend, prompts.render("review_intro", [("papers", listing.as_str())])?)?;
    let (title, introduction) = take_prefixed(&intro_reply, "TITLE:");
    let title = title.filter(|t| !t.is_empty()).unwrap_or_else(|| "Literature Review".to_string());
    let introduction = introduction.to_string();

    let mut sections = Vec::new();
    for (i, members) in ordered_groups(&assignment, &ids).into_iter().enumerate() {
        let block = members
            .iter()
            .map(|id| {
                let d = by_id[id.as_str()];
                format!("[{}] {} ({})\nAbstract: {}", provisional[id.as_str()], d.title, year(d), d.abstract_text)
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let reply = complete(backend, prompts.render("review_section", [("papers", block.as_str())])?)?;
        let (heading, text) = take_prefixed(&reply, "HEADING:");
        sections.push(ReviewSection {
            heading: heading.filter(|h| !h.is_empty()).unwrap_or_else(|| format!("Theme {}", i + 1)),
            doc_ids: members,
            text: text.to_string(),
        });
    }

    let headings = sections.iter().map(|s| format!("- {}", s.heading)).collect::<Vec<_>>().join("\n");
    let conclusion = complete(backend, prompts.render("review_conclusion", [("headings", headings.as_str())])?)?
        .trim()
        .to_string();

    // Final numbering: first citation across intro, sections, conclusion.
    let valid: BTreeSet<usize> = provisional.values().copied().collect();
    let mut order: Vec<usize> = Vec::new();
    let texts = std::iter::once(introduction.as_str())
        .chain(sections.iter().map(|s| s.text.as_str()))
        .chain(std::iter::once(conclusion.as_str()));
    for t in texts {
        for n in citation_numbers(t) {
            if valid.contains(&n) && !order.contains(&n) {
                order.push(n);
            }
        }
    }
    for s in &sections {
        for id in &s.doc_ids {
            let n = provisional[id.as_str()];
            if !order.contains(&n) {
                order.push(n);
            }
        }
    }
    let renumber: HashMap<usize, usize> = order.iter().enumerate().map(|(i, &n)| (n, i + 1)).collect();
    let mut violations = 0;
    let introduction = remap_citations(&introduction, &renumber, &mut violations);
    for s in &mut sections {
        s.text = remap_citations(&s.text, &renumber, &mut violations);
    }
    let conclusion = remap_citations(&conclusion, &renumber, &mut violations);
    let bibliography = order
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let id = &ids[n - 1];
            BibEntry {
                ref_number: i + 1,
                doc_id: id.clone(),
                citation: citation_string(by_id[id.as_str()]),
            }
        })
        .collect();
    if violations > 0 {
        tracing::warn!(violations, "removed citation markers that named no supplied paper");
    }
    Ok(ReviewOutline {
        title,
        introduction,
        body_sections: sections,
        conclusion,
        bibliography,
        citation_violations: violations,
    })
}

impl ReviewOutline {
    pub fn to_markdown(&self) -> String {
        let mut out = format!("# {}\n\n## Introduction\n\n{}\n\n", self.title, self.introduction);
        for s in &self.body_sections {
            out.push_str(&format!("## {}\n\n{}\n\n", s.heading, s.text));
        }
        out.push_str(&format!("## Conclusion\n\n{}\n\n## References\n\n", self.conclusion));
        for b in &self.bibliography {
            out.push_str(&format!("[{}] {}\n", b.ref_number, b.citation));
        }
        out
    }

    /// Every inline marker names a bibliography entry.
    pub fn citations_resolve(&self) -> bool {
        let known: BTreeSet<usize> = self.bibliography.iter().map(|b| b.ref_number).collect();
        std::iter::once(&self.introduction)
            .chain(self.body_sections.iter().map(|s| &s.text))
            .chain(std::iter::once(&self.conclusion))
            .flat_map(|t| citation_numbers(t))
            .all(|n| known.contains(&n))
    }
}
