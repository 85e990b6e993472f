//! HTTP service: REST endpoints over the three subsystems, SSE chat turns
//! and persistent sessions.

use crate::app::{App, AppError};
use crate::corpus::{CorpusError, SourceFormat};
use crate::embedding::EmbedError;
use crate::library::LibraryError;
use crate::investigation::{generate_review, topic_search, InvestigationError, TopicDeps, REVIEW_PAPER_LIMIT};
use crate::llm::{stream_increments, BackendError};
use crate::query::QueryError;
use crate::reading::{
    answer_question_streaming, compare_papers, route_question, ReadingDeps, ReadingError, MAX_COMPARE, MIN_COMPARE,
};
use crate::retrieval::{RetrievalError, SearchFilter, SearchHit};
use crate::session::{SessionError, SessionKind, SessionStore};
use crate::writing::{polish, translate, Direction, Style, WritingError};
use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::convert::Infallible;
use std::sync::Arc;
use tokio::sync::mpsc;
use tracing::Instrument;

pub const REQUEST_ID_HEADER: &str = "x-request-id";

pub struct ServiceState {
    pub app: App,
    pub sessions: Arc<SessionStore>,
}

impl ServiceState {
    pub fn new(app: App) -> Result<Arc<Self>, SessionError> {
        let sessions = SessionStore::open(&app.sessions_dir())?;
        Ok(Arc::new(Self { app, sessions }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, detail: impl ToString) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.to_string(),
                detail: detail.to_string(),
                limit: None,
            },
        }
    }

    fn with_limit(mut self, limit: usize) -> Self {
        self.body.limit = Some(limit);
        self
    }

    fn bad_request(detail: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", detail)
    }

    fn internal(detail: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Timeout => Self::new(StatusCode::GATEWAY_TIMEOUT, "BackendTimeout", e),
            BackendError::Template(_) => Self::internal(e),
            _ => Self::new(StatusCode::BAD_GATEWAY, "BackendFailure", e),
        }
    }
}

impl From<EmbedError> for ApiError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::EmptyInput => Self::bad_request(e),
            EmbedError::BackendFailure(b) => b.into(),
            other => Self::internal(other),
        }
    }
}

impl From<RetrievalError> for ApiError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::InvalidK | RetrievalError::InvalidFilter(_) => Self::bad_request(e),
            other => Self::internal(other),
        }
    }
}

impl From<ReadingError> for ApiError {
    fn from(e: ReadingError) -> Self {
        match e {
            ReadingError::EmptyQuestion => Self::bad_request(e),
            ReadingError::CountOutOfRange(n) => {
                let limit = if n < MIN_COMPARE { MIN_COMPARE } else { MAX_COMPARE };
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "CountOutOfRange", e).with_limit(limit)
            }
            ReadingError::DuplicateDocId(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "DuplicateDocId", e),
            ReadingError::NoChunks(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "NoChunks", e),
            ReadingError::UnknownDocId(_) => Self::new(StatusCode::NOT_FOUND, "UnknownDocId", e),
            ReadingError::PluginFailure(_) => Self::new(StatusCode::BAD_GATEWAY, "PluginFailure", e),
            ReadingError::BackendFailure(b) => b.into(),
            ReadingError::Retrieval(r) => r.into(),
            ReadingError::Embed(x) => x.into(),
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::EmptyQuery | QueryError::InvalidK => Self::bad_request(e),
            QueryError::NoPluginMatched => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "NoPluginMatched", e),
        }
    }
}

impl From<InvestigationError> for ApiError {
    fn from(e: InvestigationError) -> Self {
        match e {
            InvestigationError::Query(q) => q.into(),
            InvestigationError::LimitExceeded { limit, .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "LimitExceeded", e).with_limit(limit)
            }
            InvestigationError::EmptySelection => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "EmptySelection", e).with_limit(REVIEW_PAPER_LIMIT)
            }
            InvestigationError::UnknownDocId(_) => Self::new(StatusCode::NOT_FOUND, "UnknownDocId", e),
            InvestigationError::ScholarNotFound(_) => Self::new(StatusCode::NOT_FOUND, "ScholarNotFound", e),
            InvestigationError::InvalidK { .. } => Self::bad_request(e),
            InvestigationError::BackendFailure(b) => b.into(),
            InvestigationError::Embed(x) => x.into(),
        }
    }
}

impl From<WritingError> for ApiError {
    fn from(e: WritingError) -> Self {
        match e {
            WritingError::EmptySource | WritingError::EmptyDraft => Self::bad_request(e),
            WritingError::UnparseableOutput(_) => Self::new(StatusCode::BAD_GATEWAY, "UnparseableOutput", e),
            WritingError::BackendFailure(b) => b.into(),
            other => Self::internal(other),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "UnknownSession", e),
            SessionError::Busy(_) => Self::new(StatusCode::CONFLICT, "TurnInFlight", e),
            other => Self::internal(other),
        }
    }
}

impl From<LibraryError> for ApiError {
    fn from(e: LibraryError) -> Self {
        match e {
            LibraryError::Corpus(c) => Self::new(StatusCode::BAD_REQUEST, "MalformedDocument", c),
            LibraryError::Retrieval(r) => r.into(),
            LibraryError::Embed(x) => x.into(),
        }
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        match e {
            AppError::Corpus(c @ (CorpusError::EmptyDocument | CorpusError::MalformedHeader(_))) => {
                Self::new(StatusCode::BAD_REQUEST, "MalformedDocument", c)
            }
            AppError::Library(l) => l.into(),
            other => Self::internal(other),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// JSON body parsing that reports malformed input as 400.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::internal(format!("worker failed: {e}"))))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Deserialize)]
struct IngestBody {
    #[serde(default)]
    format: Option<String>,
    source: String,
    #[serde(default)]
    source_uri: Option<String>,
}

async fn ingest(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<crate::library::IngestReport> {
    let req: IngestBody = parse(&body)?;
    let format: SourceFormat = match &req.format {
        Some(f) => f.parse().map_err(ApiError::bad_request)?,
        None => SourceFormat::Markdown,
    };
    blocking(move || {
        let uri = req.source_uri.unwrap_or_else(|| "inline".to_string());
        Ok(st.app.ingest_source(&req.source, format, &uri)?)
    })
    .await
    .map(Json)
}

#[derive(Deserialize)]
struct SearchBody {
    query: String,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    filter: Option<SearchFilter>,
}

async fn search(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<Vec<SearchHit>> {
    let req: SearchBody = parse(&body)?;
    blocking(move || {
        let k = req.k.unwrap_or(st.app.config.default_k);
        if req.query.trim().is_empty() {
            return Err(ApiError::bad_request("query is empty"));
        }
        Ok(st.app.library.search(&req.query, k, &req.filter.unwrap_or_default())?)
    })
    .await
    .map(Json)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperListing {
    pub doc_id: String,
    pub title: String,
    pub authors: Vec<String>,
    pub year: Option<i32>,
    pub venue: Option<String>,
}

async fn list_papers(State(st): State<Arc<ServiceState>>) -> Json<Vec<PaperListing>> {
    Json(
        st.app
            .library
            .papers()
            .iter()
            .map(|p| PaperListing {
                doc_id: p.doc_id.clone(),
                title: p.title.clone(),
                authors: p.authors.clone(),
                year: p.year,
                venue: p.venue.clone(),
            })
            .collect(),
    )
}

async fn get_paper(State(st): State<Arc<ServiceState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    match st.app.library.paper(&id) {
        Some(p) => Ok(Json(p.as_ref()).into_response()),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownDocId", format!("unknown doc_id {id:?}"))),
    }
}

#[derive(Deserialize)]
struct CreateSession {
    kind: SessionKind,
    #[serde(default)]
    doc_ids: Vec<String>,
}

async fn create_session(State(st): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse(&body)?;
    if req.kind == SessionKind::Read && req.doc_ids.is_empty() {
        return Err(ApiError::bad_request("a read session needs a doc_id"));
    }
    if let Some(missing) = req.doc_ids.iter().find(|id| st.app.library.paper(id).is_none()) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "UnknownDocId",
            format!("unknown doc_id {missing:?}"),
        ));
    }
    let record = blocking(move || Ok(st.sessions.create(req.kind, req.doc_ids)?)).await?;
    Ok(Json(record).into_response())
}

async fn get_session(State(st): State<Arc<ServiceState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let record = blocking(move || Ok(st.sessions.get(&id)?)).await?;
    Ok(Json(record).into_response())
}

#[derive(Deserialize)]
struct MessageBody {
    content: String,
}

enum TurnEvent {
    Delta(String),
    Done(Vec<String>),
    Failed(ApiError),
}

fn event_json(value: serde_json::Value) -> Event {
    Event::default().data(value.to_string())
}

/// Runs one chat turn, streaming deltas through `tx`; returns the full
/// assistant message and its citations.
fn run_turn(
    st: &ServiceState,
    kind: SessionKind,
    doc_ids: &[String],
    content: &str,
    tx: &mpsc::UnboundedSender<TurnEvent>,
) -> Result<(String, Vec<String>), ApiError> {
    let app = &st.app;
    match kind {
        SessionKind::Investigate => {
            let deps = TopicDeps {
                library: &app.library,
                backend: app.backend.as_ref(),
                prompts: &app.prompts,
                gazetteer: &app.gazetteer,
                plugins: &app.plugins,
            };
            let result = topic_search(content, &deps, app.config.default_k)?;
            let message = if !result.summary.is_empty() {
                result.summary.clone()
            } else if result.hits.is_empty() {
                "No matching papers found.".to_string()
            } else {
                let mut m = String::from("Summary unavailable. Top papers:");
                for h in &result.hits {
                    let year = h.year.map_or_else(|| "n.d.".to_string(), |y| y.to_string());
                    m.push_str(&format!("\n- {} ({year})", h.title));
                }
                m
            };
            for piece in stream_increments(&message) {
                let _ = tx.send(TurnEvent::Delta(piece.to_string()));
            }
            Ok((message, result.hits.into_iter().map(|h| h.doc_id).collect()))
        }
        SessionKind::Read => {
            let doc_id = doc_ids.first().ok_or_else(|| ApiError::bad_request("read session without doc_id"))?;
            let paper = app
                .library
                .paper(doc_id)
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownDocId", format!("unknown doc_id {doc_id:?}")))?;
            let rq = route_question(
                content,
                &paper,
                &app.library,
                app.backend.as_ref(),
                &app.prompts,
                app.config.route_threshold,
            )?;
            let deps = ReadingDeps {
                library: &app.library,
                backend: app.backend.as_ref(),
                prompts: &app.prompts,
                plugins: &app.plugins,
            };
            let mut streamed = String::new();
            let answer = answer_question_streaming(&rq, &deps, app.config.default_k, &mut |d| {
                streamed.push_str(d);
                let _ = tx.send(TurnEvent::Delta(d.to_string()));
            })?;
            if streamed.is_empty() {
                for piece in stream_increments(&answer.text) {
                    let _ = tx.send(TurnEvent::Delta(piece.to_string()));
                }
                streamed = answer.text.clone();
            }
            Ok((streamed, answer.cited_chunk_ids))
        }
    }
}

async fn post_message(
    State(st): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: MessageBody = parse(&body)?;
    if req.content.trim().is_empty() {
        return Err(ApiError::bad_request("message content is empty"));
    }
    let turn = st.sessions.begin_turn(&id)?;
    let record = {
        let st = Arc::clone(&st);
        let id = id.clone();
        blocking(move || Ok(st.sessions.get(&id)?)).await?
    };
    let (tx, mut rx) = mpsc::unbounded_channel();
    let span = tracing::Span::current();
    tokio::task::spawn_blocking(move || {
        let _entered = span.enter();
        let outcome = run_turn(&st, record.kind, &record.doc_ids, &req.content, &tx).and_then(|(message, citations)| {
            st.sessions.record_exchange(&turn, &req.content, &message)?;
            Ok(citations)
        });
        drop(turn);
        let _ = tx.send(match outcome {
            Ok(citations) => TurnEvent::Done(citations),
            Err(e) => TurnEvent::Failed(e),
        });
    });

    // Failures before the first delta become plain HTTP errors.
    let first = rx.recv().await.ok_or_else(|| ApiError::internal("turn worker vanished"))?;
    if let TurnEvent::Failed(e) = first {
        return Err(e);
    }
    let stream = futures::stream::unfold((Some(first), rx, false), |(pending, mut rx, finished)| async move {
        if finished {
            return None;
        }
        let ev = match pending {
            Some(ev) => ev,
            None => rx.recv().await?,
        };
        let (event, last) = match ev {
            TurnEvent::Delta(d) => (event_json(json!({"delta": d})), false),
            TurnEvent::Done(citations) => (event_json(json!({"done": true, "citations": citations})), true),
            TurnEvent::Failed(e) => (event_json(json!({"error": e.body.error, "detail": e.body.detail})), true),
        };
        Some((Ok::<_, Infallible>(event), (None, rx, last)))
    });
    Ok(Sse::new(stream).into_response())
}

#[derive(Deserialize)]
struct DocIdsBody {
    doc_ids: Vec<String>,
    #[serde(default)]
    seed: Option<u64>,
}

async fn compare(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<crate::reading::ComparisonReport> {
    let req: DocIdsBody = parse(&body)?;
    blocking(move || Ok(compare_papers(&req.doc_ids, &st.app.library, st.app.backend.as_ref(), &st.app.prompts)?))
        .await
        .map(Json)
}

async fn review(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<crate::investigation::ReviewOutline> {
    let req: DocIdsBody = parse(&body)?;
    blocking(move || {
        let seed = req.seed.unwrap_or(st.app.config.seed);
        Ok(generate_review(&req.doc_ids, &st.app.library, st.app.backend.as_ref(), &st.app.prompts, seed)?)
    })
    .await
    .map(Json)
}

#[derive(Deserialize)]
struct PolishBody {
    draft: String,
    #[serde(default = "default_style")]
    style: String,
}

fn default_style() -> String {
    "academic".into()
}

async fn polish_route(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<crate::writing::PolishResult> {
    let req: PolishBody = parse(&body)?;
    let style: Style = req.style.parse().map_err(ApiError::bad_request)?;
    blocking(move || Ok(polish(&req.draft, style, st.app.backend.as_ref(), &st.app.prompts)?))
        .await
        .map(Json)
}

#[derive(Deserialize)]
struct TranslateBody {
    source: String,
    direction: String,
    #[serde(default)]
    domain: Option<String>,
}

async fn translate_route(
    State(st): State<Arc<ServiceState>>,
    body: Bytes,
) -> ApiResult<crate::writing::TranslationResult> {
    let req: TranslateBody = parse(&body)?;
    let direction: Direction = req.direction.parse().map_err(ApiError::bad_request)?;
    blocking(move || {
        Ok(translate(
            &req.source,
            direction,
            &st.app.lexicon,
            req.domain.as_deref(),
            st.app.backend.as_ref(),
            &st.app.prompts,
        )?)
    })
    .await
    .map(Json)
}

fn valid_request_id(v: &str) -> bool {
    !v.is_empty() && v.len() <= 128 && v.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

async fn request_id(req: Request, next: Next) -> Response {
    let id = req
        .headers()
        .get(REQUEST_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|v| valid_request_id(v))
        .map(str::to_string)
        .unwrap_or_else(|| format!("{:016x}", rand::random::<u64>()));
    let span = tracing::info_span!("request", request_id = %id, method = %req.method(), path = %req.uri().path());
    let mut resp = next.run(req).instrument(span.clone()).await;
    span.in_scope(|| tracing::info!(status = resp.status().as_u16(), "handled"));
    resp.headers_mut()
        .insert(REQUEST_ID_HEADER, HeaderValue::from_str(&id).expect("validated header value"));
    resp
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/ingest", post(ingest))
        .route("/v1/search", post(search))
        .route("/v1/papers", get(list_papers))
        .route("/v1/papers/{id}", get(get_paper))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/compare", post(compare))
        .route("/v1/review", post(review))
        .route("/v1/polish", post(polish_route))
        .route("/v1/translate", post(translate_route))
        .layer(middleware::from_fn(request_id))
        .with_state(state)
}

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(state: Arc<ServiceState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&state.app.config.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
