//! Exact in-memory vector + keyword index over chunks, with metadata filters.
//!
//! Scores are total-ordered: score descending, then chunk id ascending.

use crate::embedding::{cosine_f32, EmbeddingVector};
use crate::text::{fold, word_unigrams};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, RwLock};
use thiserror::Error;

pub const SNIPPET_CHARS: usize = 200;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("vector for {0} is not unit-norm")]
    NotUnitNorm(String),
    #[error("index files are inconsistent: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EntryMeta {
    pub doc_id: String,
    pub year: Option<i32>,
    pub authors: Vec<String>,
    pub institutions: Vec<String>,
    pub domain_tags: Vec<String>,
    pub venue: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk_id: String,
    /// Chunk text; feeds keyword postings, keyword filters and snippets.
    pub text: String,
    pub vector: EmbeddingVector,
    pub meta: EntryMeta,
}

/// Conjunctive across fields, disjunctive within a field. Empty fields
/// impose nothing.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchFilter {
    pub scholars: Vec<String>,
    pub institutions: Vec<String>,
    pub year_range: (Option<i32>, Option<i32>),
    pub domains: Vec<String>,
    pub keywords: Vec<String>,
    /// Restricts hits to these documents.
    pub doc_ids: Vec<String>,
}

fn any_substring(needles: &[String], haystacks: &[String]) -> bool {
    needles.iter().any(|n| {
        let n = fold(n);
        haystacks.iter().any(|h| fold(h).contains(&n))
    })
}

impl SearchFilter {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if let (Some(lo), Some(hi)) = self.year_range {
            if lo > hi {
                return Err(RetrievalError::InvalidFilter(format!("year range {lo} > {hi}")));
            }
        }
        Ok(())
    }

    pub fn matches(&self, text: &str, meta: &EntryMeta) -> bool {
        if !self.scholars.is_empty() && !any_substring(&self.scholars, &meta.authors) {
            return false;
        }
        if !self.institutions.is_empty() && !any_substring(&self.institutions, &meta.institutions) {
            return false;
        }
        if !self.domains.is_empty() && !any_substring(&self.domains, &meta.domain_tags) {
            return false;
        }
        match (self.year_range, meta.year) {
            ((None, None), _) => {}
            (_, None) => return false,
            ((lo, hi), Some(y)) => {
                if lo.is_some_and(|lo| y < lo) || hi.is_some_and(|hi| y > hi) {
                    return false;
                }
            }
        }
        if !self.keywords.is_empty() {
            let folded = fold(text);
            if !self.keywords.iter().all(|k| folded.contains(&fold(k))) {
                return false;
            }
        }
        self.doc_ids.is_empty() || self.doc_ids.contains(&meta.doc_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
    pub snippet: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridWeights {
    pub vector: f64,
    pub keyword: f64,
}

impl Default for HybridWeights {
    fn default() -> Self {
        Self {
            vector: 0.7,
            keyword: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
struct Stored {
    entry: IndexEntry,
    term_counts: BTreeMap<String, u32>,
}

/// Exact index. Iteration order is chunk-id order.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    entries: BTreeMap<String, Stored>,
    /// term -> chunk id -> term frequency
    postings: BTreeMap<String, BTreeMap<String, u32>>,
}

pub fn snippet(text: &str) -> String {
    text.chars().take(SNIPPET_CHARS).collect()
}

fn term_counts(text: &str) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for t in word_unigrams(text) {
        *counts.entry(t).or_default() += 1;
    }
    counts
}

fn rank(mut scored: Vec<(f64, &str, &str)>, k: usize) -> Vec<SearchHit> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored
        .into_iter()
        .take(k)
        .map(|(score, id, text)| SearchHit {
            chunk_id: id.to_string(),
            score,
            snippet: snippet(text),
        })
        .collect()
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
            postings: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, chunk_id: &str) -> Option<&IndexEntry> {
        self.entries.get(chunk_id).map(|s| &s.entry)
    }

    pub fn entries(&self) -> impl Iterator<Item = &IndexEntry> {
        self.entries.values().map(|s| &s.entry)
    }

    fn check_dim(&self, got: usize) -> Result<(), RetrievalError> {
        if got != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// Inserts or replaces entries by chunk id. Validates the whole batch
    /// before touching the index.
    pub fn upsert(&mut self, entries: Vec<IndexEntry>) -> Result<(), RetrievalError> {
        for e in &entries {
            self.check_dim(e.vector.dim())?;
            let norm: f64 = e.vector.values().iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-4 {
                return Err(RetrievalError::NotUnitNorm(e.chunk_id.clone()));
            }
        }
        for e in entries {
            self.remove_postings(&e.chunk_id);
            let counts = term_counts(&e.text);
            for (term, &tf) in &counts {
                self.postings
                    .entry(term.clone())
                    .or_default()
                    .insert(e.chunk_id.clone(), tf);
            }
            self.entries.insert(
                e.chunk_id.clone(),
                Stored {
                    entry: e,
                    term_counts: counts,
                },
            );
        }
        Ok(())
    }

    fn remove_postings(&mut self, chunk_id: &str) {
        let Some(old) = self.entries.get(chunk_id) else {
            return;
        };
        for term in old.term_counts.keys() {
            if let Some(list) = self.postings.get_mut(term) {
                list.remove(chunk_id);
                if list.is_empty() {
                    self.postings.remove(term);
                }
            }
        }
    }

    fn candidates<'a>(&'a self, filter: &'a SearchFilter) -> impl Iterator<Item = &'a Stored> + 'a {
        self.entries
            .values()
            .filter(move |s| filter.matches(&s.entry.text, &s.entry.meta))
    }

    /// Exact top-k by cosine similarity among entries passing `filter`.
    pub fn vector_search(
        &self,
        query: &EmbeddingVector,
        filter: &SearchFilter,
        k: usize,
    ) -> Result<Vec<SearchHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        self.check_dim(query.dim())?;
        filter.validate()?;
        let scored = self
            .candidates(filter)
            .map(|s| {
                (
                    cosine_f32(query.values(), s.entry.vector.values()),
                    s.entry.chunk_id.as_str(),
                    s.entry.text.as_str(),
                )
            })
            .collect();
        Ok(rank(scored, k))
    }

    /// `ln(1 + N / df)`, or `None` for terms absent from the index.
    pub fn idf(&self, term: &str) -> Option<f64> {
        let df = self.postings.get(term)?.len();
        Some((1.0 + self.entries.len() as f64 / df as f64).ln())
    }

    pub fn hybrid_search(
        &self,
        query_text: &str,
        query_vec: &EmbeddingVector,
        filter: &SearchFilter,
        k: usize,
    ) -> Result<Vec<SearchHit>, RetrievalError> {
        self.hybrid_search_weighted(query_text, query_vec, filter, k, HybridWeights::default())
    }

    /// `w.vector * cosine + w.keyword * keyword`, where the keyword score is
    /// the TF-IDF sum of distinct query unigrams divided by the best such sum
    /// among candidates (0 when no candidate contains any query term).
    pub fn hybrid_search_weighted(
        &self,
        query_text: &str,
        query_vec: &EmbeddingVector,
        filter: &SearchFilter,
        k: usize,
        weights: HybridWeights,
    ) -> Result<Vec<SearchHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        self.check_dim(query_vec.dim())?;
        filter.validate()?;
        let terms: Vec<(String, f64)> = word_unigrams(query_text)
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter_map(|t| self.idf(&t).map(|idf| (t, idf)))
            .collect();
        let cands: Vec<&Stored> = self.candidates(filter).collect();
        let raw: Vec<f64> = cands
            .iter()
            .map(|s| {
                terms
                    .iter()
                    .map(|(t, idf)| f64::from(s.term_counts.get(t).copied().unwrap_or(0)) * idf)
                    .sum()
            })
            .collect();
        let best = raw.iter().copied().fold(0.0, f64::max);
        let scored = cands
            .iter()
            .zip(&raw)
            .map(|(s, &r)| {
                let kw = if best > 0.0 { r / best } else { 0.0 };
                let cos = cosine_f32(query_vec.values(), s.entry.vector.values());
                (
                    weights.vector * cos + weights.keyword * kw,
                    s.entry.chunk_id.as_str(),
                    s.entry.text.as_str(),
                )
            })
            .collect();
        Ok(rank(scored, k))
    }

    /// Writes `meta.json` and `vectors.bin` (row-major little-endian f32 in
    /// chunk-id order) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        std::fs::create_dir_all(dir)?;
        let meta = PersistedMeta {
            dimension: self.dim,
            count: self.entries.len(),
            entries: self
                .entries
                .values()
                .map(|s| PersistedEntry {
                    chunk_id: s.entry.chunk_id.clone(),
                    text: s.entry.text.clone(),
                    meta: s.entry.meta.clone(),
                })
                .collect(),
        };
        let mut vectors = Vec::with_capacity(self.entries.len() * self.dim * 4);
        for s in self.entries.values() {
            for v in s.entry.vector.values() {
                vectors.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
        std::fs::write(dir.join("vectors.bin"), vectors)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let meta: PersistedMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
        let vectors = std::fs::read(dir.join("vectors.bin"))?;
        if meta.count != meta.entries.len() || vectors.len() != meta.count * meta.dimension * 4 {
            return Err(RetrievalError::Format(format!(
                "count {} / entries {} / vector bytes {} disagree",
                meta.count,
                meta.entries.len(),
                vectors.len()
            )));
        }
        let mut index = Self::new(meta.dimension);
        let row_bytes = meta.dimension * 4;
        let mut entries = Vec::with_capacity(meta.count);
        for (i, e) in meta.entries.into_iter().enumerate() {
            let row = &vectors[i * row_bytes..(i + 1) * row_bytes];
            let values = row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push(IndexEntry {
                chunk_id: e.chunk_id,
                text: e.text,
                vector: EmbeddingVector::from_raw(values),
                meta: e.meta,
            });
        }
        index.upsert(entries)?;
        Ok(index)
    }
}

#[derive(Serialize, Deserialize)]
struct PersistedEntry {
    chunk_id: String,
    text: String,
    meta: EntryMeta,
}

#[derive(Serialize, Deserialize)]
struct PersistedMeta {
    dimension: usize,
    count: usize,
    entries: Vec<PersistedEntry>,
}

/// Snapshot-isolated index handle: readers keep the `Arc` they took while a
/// writer installs a modified copy.
#[derive(Debug)]
pub struct SharedIndex {
    current: RwLock<Arc<VectorIndex>>,
}

impl SharedIndex {
    pub fn new(index: VectorIndex) -> Self {
        Self {
            current: RwLock::new(Arc::new(index)),
        }
    }

    pub fn snapshot(&self) -> Arc<VectorIndex> {
        Arc::clone(&self.current.read().expect("index lock"))
    }

    pub fn upsert(&self, entries: Vec<IndexEntry>) -> Result<(), RetrievalError> {
        let mut guard = self.current.write().expect("index lock");
        let mut next = VectorIndex::clone(&guard);
        next.upsert(entries)?;
        *guard = Arc::new(next);
        Ok(())
    }
}
