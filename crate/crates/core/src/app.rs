//! Configuration and on-disk state shared by the HTTP service and the CLI.

use crate::corpus::{parse_document, ChunkPolicy, CorpusError, PaperDocument, SourceFormat};
use crate::embedding::{EmbedError, ProjectionModel};
use crate::library::{IngestReport, Library, LibraryError};
use crate::llm::{Backend, MockBackend, PromptLibrary, RemoteBackend, RemoteConfig};
use crate::query::{Gazetteer, PluginRegistry};
use crate::retrieval::{RetrievalError, VectorIndex};
use crate::writing::Lexicon;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

pub const CONFIG_ENV: &str = "LITPILOT_CONFIG";
pub const API_KEY_ENV: &str = "LITPILOT_API_KEY";

#[derive(Debug, Error)]
pub enum AppError {
    #[error("cannot read config {path}: {message}")]
    ConfigRead { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("{field} path does not exist: {path}")]
    MissingPath { field: &'static str, path: PathBuf },
    #[error("{0}")]
    Load(String),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    /// Scripted rules file (JSON list of `{match, pattern, response}`).
    Mock { rules: PathBuf },
    /// Replies with the prompt itself.
    Echo,
    /// Fails every call; pipelines run in their degraded modes.
    #[default]
    Unavailable,
    Remote {
        base_url: String,
        model: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_timeout() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default = "default_k")]
    pub default_k: usize,
    #[serde(default = "default_theta")]
    pub route_threshold: f64,
    #[serde(default)]
    pub chunk: ChunkPolicy,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub gazetteer: Option<PathBuf>,
    /// Trained projection model; without one a seeded random projection of
    /// `embedding_dim` outputs is used.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}
fn default_data_dir() -> PathBuf {
    PathBuf::from("litpilot-data")
}
fn default_k() -> usize {
    crate::reading::DEFAULT_ANSWER_K
}
fn default_theta() -> f64 {
    crate::reading::DEFAULT_ROUTE_THRESHOLD
}
fn default_dim() -> usize {
    256
}

impl Default for ServiceConfig {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

impl ServiceConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(raw: &str, base: &Path) -> Result<Self, AppError> {
        let mut cfg: Self = toml::from_str(raw).map_err(|e| AppError::ConfigInvalid(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data_dir);
        for p in [&mut cfg.lexicon, &mut cfg.gazetteer, &mut cfg.model, &mut cfg.prompts_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let BackendConfig::Mock { rules } = &mut cfg.backend {
            fix(rules);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let raw = std::fs::read_to_string(path).map_err(|e| AppError::ConfigRead {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&raw, base)
    }

    /// `explicit`, else `LITPILOT_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, AppError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::load(Path::new(&p)),
                None => Ok(Self::default()),
            },
        }
    }

    /// Every configured input path must exist.
    pub fn validate(&self) -> Result<(), AppError> {
        let mut inputs: Vec<(&'static str, &PathBuf)> = Vec::new();
        if let Some(p) = &self.lexicon {
            inputs.push(("lexicon", p));
        }
        if let Some(p) = &self.gazetteer {
            inputs.push(("gazetteer", p));
        }
        if let Some(p) = &self.model {
            inputs.push(("model", p));
        }
        if let Some(p) = &self.prompts_dir {
            inputs.push(("prompts_dir", p));
        }
        if let BackendConfig::Mock { rules } = &self.backend {
            inputs.push(("backend.rules", rules));
        }
        for (field, path) in inputs {
            if !path.exists() {
                return Err(AppError::MissingPath {
                    field,
                    path: path.clone(),
                });
            }
        }
        if self.embedding_dim == 0 && self.model.is_none() {
            return Err(AppError::ConfigInvalid("embedding_dim must be at least 1".into()));
        }
        if self.default_k == 0 {
            return Err(AppError::ConfigInvalid("default_k must be at least 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.route_threshold) {
            return Err(AppError::ConfigInvalid("route_threshold must lie in [-1, 1]".into()));
        }
        self.chunk.validate()?;
        Ok(())
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>, AppError> {
        Ok(match &self.backend {
            BackendConfig::Mock { rules } => {
                Arc::new(MockBackend::from_rules_file(rules).map_err(|e| AppError::Load(e.to_string()))?)
            }
            BackendConfig::Echo => Arc::new(MockBackend::echo()),
            BackendConfig::Unavailable => Arc::new(MockBackend::unavailable()),
            BackendConfig::Remote {
                base_url,
                model,
                timeout_secs,
            } => Arc::new(
                RemoteBackend::new(RemoteConfig {
                    base_url: base_url.clone(),
                    model: model.clone(),
                    timeout_secs: *timeout_secs,
                })
                .with_api_key(std::env::var(API_KEY_ENV).ok()),
            ),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub papers: usize,
    pub chunks: usize,
    pub unindexed: usize,
}

pub struct App {
    pub config: ServiceConfig,
    pub library: Arc<Library>,
    pub backend: Arc<dyn Backend>,
    pub prompts: PromptLibrary,
    pub gazetteer: Gazetteer,
    pub lexicon: Lexicon,
    pub plugins: PluginRegistry,
}

fn read_papers(dir: &Path) -> Result<Vec<PaperDocument>, AppError> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let doc: PaperDocument = serde_json::from_slice(&std::fs::read(&p)?)
            .map_err(|e| AppError::Load(format!("{}: {e}", p.display())))?;
        out.push(doc);
    }
    Ok(out)
}

impl App {
    /// Validates the config, builds the configured backend and loads the
    /// library from the data directory.
    pub fn open(config: ServiceConfig) -> Result<Self, AppError> {
        config.validate()?;
        let backend = config.build_backend()?;
        Self::open_with_backend(config, backend)
    }

    pub fn open_with_backend(config: ServiceConfig, backend: Arc<dyn Backend>) -> Result<Self, AppError> {
        config.validate()?;
        std::fs::create_dir_all(&config.data_dir)?;
        let prompts = match &config.prompts_dir {
            Some(d) => PromptLibrary::with_overrides(d)?,
            None => PromptLibrary::builtin(),
        };
        let gazetteer = match &config.gazetteer {
            Some(p) => Gazetteer::load(p).map_err(|e| AppError::Load(e.to_string()))?,
            None => Gazetteer::default(),
        };
        let lexicon = match &config.lexicon {
            Some(p) => Lexicon::load(p).map_err(|e| AppError::Load(e.to_string()))?,
            None => Lexicon::default(),
        };
        let model = Arc::new(match &config.model {
            Some(p) => ProjectionModel::load(p)?,
            None => ProjectionModel::init(config.embedding_dim, 0.05, config.seed),
        });
        let papers = read_papers(&papers_dir(&config))?;
        let library = Arc::new(load_library(&config, model, papers)?);
        let plugins = PluginRegistry::with_library(Arc::clone(&library));
        Ok(Self {
            config,
            library,
            backend,
            prompts,
            gazetteer,
            lexicon,
            plugins,
        })
    }

    pub fn papers_dir(&self) -> PathBuf {
        papers_dir(&self.config)
    }

    pub fn index_dir(&self) -> PathBuf {
        self.config.data_dir.join("index")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.config.data_dir.join("sessions")
    }

    /// Parses, indexes and stores one document; the index is saved too.
    pub fn ingest_source(&self, source: &str, format: SourceFormat, source_uri: &str) -> Result<IngestReport, AppError> {
        let mut doc = parse_document(source, format)?;
        if doc.source_uri.is_empty() {
            doc.source_uri = source_uri.to_string();
        }
        let dir = self.papers_dir();
        std::fs::create_dir_all(&dir)?;
        let json = serde_json::to_vec_pretty(&doc).expect("documents serialize");
        let report = self.library.ingest(doc)?;
        write_atomic(&dir.join(format!("{}.json", report.doc_id)), &json)?;
        self.save_index()?;
        Ok(report)
    }

    /// Re-embeds every stored paper into a fresh index and saves it.
    pub fn rebuild_index(&mut self) -> Result<IndexSummary, AppError> {
        let papers = read_papers(&self.papers_dir())?;
        let lib = Library::new(self.library.shared_model(), self.config.chunk);
        let mut summary = IndexSummary::default();
        for doc in papers {
            let r = lib.ingest(doc)?;
            summary.papers += 1;
            summary.chunks += r.chunks;
            summary.unindexed += r.unindexed;
        }
        self.library = Arc::new(lib);
        self.plugins = PluginRegistry::with_library(Arc::clone(&self.library));
        self.save_index()?;
        Ok(summary)
    }

    pub fn save_index(&self) -> Result<(), AppError> {
        self.library.index().save(&self.index_dir())?;
        Ok(())
    }
}

fn papers_dir(config: &ServiceConfig) -> PathBuf {
    config.data_dir.join("papers")
}

/// Uses the saved index when it matches the stored papers, otherwise
/// re-embeds everything.
fn load_library(config: &ServiceConfig, model: Arc<ProjectionModel>, papers: Vec<PaperDocument>) -> Result<Library, AppError> {
    let index_dir = config.data_dir.join("index");
    if index_dir.join("meta.json").exists() {
        match VectorIndex::load(&index_dir) {
            Ok(index) if index.dim() == model.d_out() => {
                let lib = Library::restore(Arc::clone(&model), config.chunk, papers.clone(), index)?;
                let chunk_ids: BTreeSet<String> = lib.all_chunks().into_iter().map(|c| c.chunk_id).collect();
                let indexed: BTreeSet<String> = lib.index().entries().map(|e| e.chunk_id.clone()).collect();
                let missing_embeddable = lib
                    .all_chunks()
                    .iter()
                    .any(|c| !indexed.contains(&c.chunk_id) && lib.embed(&c.text).is_ok());
                if indexed.is_subset(&chunk_ids) && !missing_embeddable {
                    return Ok(lib);
                }
                tracing::info!("saved index is stale; re-embedding the library");
            }
            Ok(_) => tracing::info!("saved index has another dimension; re-embedding the library"),
            Err(e) => tracing::warn!(error = %e, "saved index unreadable; re-embedding the library"),
        }
    }
    let lib = Library::new(model, config.chunk);
    for doc in papers {
        lib.ingest(doc)?;
    }
    Ok(lib)
}

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}
