//! The ingested paper collection: documents, their chunks and the retrieval
//! index built over them.

use crate::corpus::{split_into_chunks, Chunk, ChunkPolicy, CorpusError, PaperDocument};
use crate::embedding::{embed, EmbedError, EmbeddingVector, ProjectionModel};
use crate::retrieval::{EntryMeta, IndexEntry, RetrievalError, SearchFilter, SearchHit, SharedIndex, VectorIndex};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub doc_id: String,
    pub title: String,
    pub chunks: usize,
    /// Chunks left out of the index because they yield no features.
    pub unindexed: usize,
}

#[derive(Default)]
struct Store {
    papers: BTreeMap<String, Arc<PaperDocument>>,
    chunks: BTreeMap<String, Chunk>,
    by_doc: BTreeMap<String, Vec<String>>,
}

pub struct Library {
    store: RwLock<Store>,
    index: SharedIndex,
    model: Arc<ProjectionModel>,
    policy: ChunkPolicy,
}

fn meta_for(doc: &PaperDocument) -> EntryMeta {
    EntryMeta {
        doc_id: doc.doc_id.clone(),
        year: doc.year,
        authors: doc.authors.clone(),
        institutions: doc.institutions.clone(),
        domain_tags: doc.domains.clone(),
        venue: doc.venue.clone(),
    }
}

impl Library {
    pub fn new(model: Arc<ProjectionModel>, policy: ChunkPolicy) -> Self {
        Self {
            store: RwLock::new(Store::default()),
            index: SharedIndex::new(VectorIndex::new(model.d_out())),
            model,
            policy,
        }
    }

    /// Rebuilds the collection around a previously saved index; papers are
    /// re-chunked but not re-embedded.
    pub fn restore(
        model: Arc<ProjectionModel>,
        policy: ChunkPolicy,
        papers: Vec<PaperDocument>,
        index: VectorIndex,
    ) -> Result<Self, LibraryError> {
        if index.dim() != model.d_out() {
            return Err(RetrievalError::DimensionMismatch {
                expected: model.d_out(),
                got: index.dim(),
            }
            .into());
        }
        let mut store = Store::default();
        for doc in papers {
            let chunks = split_into_chunks(&doc, &policy)?;
            store
                .by_doc
                .insert(doc.doc_id.clone(), chunks.iter().map(|c| c.chunk_id.clone()).collect());
            for c in chunks {
                store.chunks.insert(c.chunk_id.clone(), c);
            }
            store.papers.insert(doc.doc_id.clone(), Arc::new(doc));
        }
        Ok(Self {
            store: RwLock::new(store),
            index: SharedIndex::new(index),
            model,
            policy,
        })
    }

    pub fn model(&self) -> &ProjectionModel {
        &self.model
    }

    pub fn shared_model(&self) -> Arc<ProjectionModel> {
        Arc::clone(&self.model)
    }

    pub fn policy(&self) -> &ChunkPolicy {
        &self.policy
    }

    pub fn index(&self) -> Arc<VectorIndex> {
        self.index.snapshot()
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        embed(text, &self.model)
    }

    /// Hybrid search over the current index snapshot. A query without
    /// n-gram features matches nothing.
    pub fn search(&self, query: &str, k: usize, filter: &SearchFilter) -> Result<Vec<SearchHit>, LibraryError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK.into());
        }
        filter.validate()?;
        let vector = match self.embed(query) {
            Ok(v) => v,
            Err(EmbedError::EmptyInput) => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        Ok(self.index().hybrid_search(query, &vector, filter, k)?)
    }

    /// Chunks, embeds and indexes `doc`. Re-ingesting identical content
    /// replaces the earlier copy.
    pub fn ingest(&self, doc: PaperDocument) -> Result<IngestReport, LibraryError> {
        let chunks = split_into_chunks(&doc, &self.policy)?;
        let meta = meta_for(&doc);
        let mut entries = Vec::with_capacity(chunks.len());
        let mut unindexed = 0;
        for c in &chunks {
            match embed(&c.text, &self.model) {
                Ok(vector) => entries.push(IndexEntry {
                    chunk_id: c.chunk_id.clone(),
                    text: c.text.clone(),
                    vector,
                    meta: meta.clone(),
                }),
                Err(EmbedError::EmptyInput) => unindexed += 1,
                Err(e) => return Err(e.into()),
            }
        }
        self.index.upsert(entries)?;
        let report = IngestReport {
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            chunks: chunks.len(),
            unindexed,
        };
        let mut store = self.store.write().expect("library lock");
        let ids = chunks.iter().map(|c| c.chunk_id.clone()).collect();
        for c in chunks {
            store.chunks.insert(c.chunk_id.clone(), c);
        }
        store.by_doc.insert(doc.doc_id.clone(), ids);
        store.papers.insert(doc.doc_id.clone(), Arc::new(doc));
        Ok(report)
    }

    pub fn paper(&self, doc_id: &str) -> Option<Arc<PaperDocument>> {
        self.store.read().expect("library lock").papers.get(doc_id).cloned()
    }

    /// All papers in doc-id order.
    pub fn papers(&self) -> Vec<Arc<PaperDocument>> {
        self.store.read().expect("library lock").papers.values().cloned().collect()
    }

    pub fn paper_count(&self) -> usize {
        self.store.read().expect("library lock").papers.len()
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<Chunk> {
        self.store.read().expect("library lock").chunks.get(chunk_id).cloned()
    }

    /// Chunks of one paper in document order.
    pub fn chunks_of(&self, doc_id: &str) -> Vec<Chunk> {
        let store = self.store.read().expect("library lock");
        store
            .by_doc
            .get(doc_id)
            .map(|ids| ids.iter().filter_map(|id| store.chunks.get(id).cloned()).collect())
            .unwrap_or_default()
    }

    /// Every chunk, grouped by paper in doc-id order.
    pub fn all_chunks(&self) -> Vec<Chunk> {
        let store = self.store.read().expect("library lock");
        store
            .by_doc
            .values()
            .flatten()
            .filter_map(|id| store.chunks.get(id).cloned())
            .collect()
    }

    pub fn doc_of_chunk(&self, chunk_id: &str) -> Option<String> {
        self.store
            .read()
            .expect("library lock")
            .chunks
            .get(chunk_id)
            .map(|c| c.doc_id.clone())
    }
}
