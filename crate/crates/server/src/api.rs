//! `/api/*`: the exploration loop (search, cluster and suggest, images).

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use croqs_core::backend::{BackendError, Sampling};
use croqs_core::clustering::kmeans_partition;
use croqs_core::orchestrator::{Method, PromptTemplate, Suggester};
use croqs_core::{search, Client, EmbeddingStore, PrototypeKind, RankedResultSet, ScoredId};

use crate::cache::TokenCache;
use crate::config::{MediaConfig, ServerConfig};
use crate::error::ApiError;

pub const SEARCH_SCHEMA: &str = include_str!("../schemas/search.json");
pub const SUGGEST_SCHEMA: &str = include_str!("../schemas/suggest.json");

/// A cached search: the query, its embedding and its result set.
#[derive(Debug)]
pub struct Session {
    pub query: String,
    pub results: RankedResultSet,
}

pub struct AppState {
    pub store: Arc<EmbeddingStore>,
    pub client: Client,
    pub sessions: TokenCache<Session>,
    pub media: MediaConfig,
    pub prompt: PromptTemplate,
    pub max_k: usize,
    pub groupcap_images: usize,
    pub max_tokens: usize,
    pub static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(
        store: Arc<EmbeddingStore>,
        client: Client,
        config: &ServerConfig,
    ) -> Result<Self, String> {
        let prompt = match &config.suggest.prompt_template {
            Some(p) => PromptTemplate::load(p, config.suggest.prompt_examples.as_deref())
                .map_err(|e| format!("{}: {e}", p.display()))?,
            None => PromptTemplate::default(),
        };
        let capacity =
            NonZeroUsize::new(config.cache.capacity).ok_or("cache capacity must be positive")?;
        Ok(Self {
            store,
            client,
            sessions: TokenCache::new(capacity, Duration::from_secs(config.cache.ttl_secs)),
            media: config.media.clone(),
            prompt,
            max_k: config.suggest.max_k,
            groupcap_images: config.suggest.groupcap_images,
            max_tokens: config.suggest.max_tokens,
            static_dir: config.static_dir.clone(),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/search", post(search_handler))
        .route("/api/suggest", post(suggest_handler))
        .route("/api/image/{id}", get(image_handler))
        .route("/api/schema/{name}", get(schema_handler))
        .fallback(get(static_handler))
        .with_state(state)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> T + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub query: String,
    pub k: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SearchResponse {
    pub results: Vec<ScoredId>,
    pub query_token: String,
}

/// Same query and `k` give the same token.
pub fn query_token(query: &str, k: usize) -> String {
    let mut h = Sha256::new();
    h.update(query.as_bytes());
    h.update([0]);
    h.update(k.to_le_bytes());
    let digest = h.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

async fn search_handler(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<SearchResponse>, ApiError> {
    let req: SearchRequest = parse(&body)?;
    let query = req.query.trim().to_string();
    if query.is_empty() {
        return Err(ApiError::bad_request("`query` must not be empty"));
    }
    if req.k == 0 || req.k > state.max_k {
        return Err(ApiError::bad_request(format!(
            "`k` must be between 1 and {}",
            state.max_k
        )));
    }
    let k = req.k;
    let st = state.clone();
    let q = query.clone();
    let results = blocking(move || -> Result<RankedResultSet, ApiError> {
        let v = st.client.embed_text(std::slice::from_ref(&q))?;
        Ok(search(&st.store, v[0].as_slice(), k)?)
    })
    .await??;
    let token = query_token(&query, k);
    let body = SearchResponse {
        results: results.items.clone(),
        query_token: token.clone(),
    };
    state
        .sessions
        .insert(token, Session { query, results }, Instant::now());
    Ok(Json(body))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiMethod {
    #[default]
    PrototypeCaption,
    Groupcap,
    Identity,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuggestRequest {
    pub query_token: String,
    pub m: usize,
    #[serde(default)]
    pub method: ApiMethod,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub prototype_kind: Option<PrototypeKind>,
    #[serde(default)]
    pub query_aware: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClusterSuggestion {
    pub cluster_id: String,
    pub image_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub suggestion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prototype_kind: Option<PrototypeKind>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SuggestResponse {
    pub clusters: Vec<ClusterSuggestion>,
}

async fn suggest_handler(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<SuggestResponse>, ApiError> {
    let req: SuggestRequest = parse(&body)?;
    let session = state
        .sessions
        .get(&req.query_token, Instant::now())
        .ok_or_else(|| ApiError::not_found("unknown or expired query_token"))?;
    let n = session.results.len();
    if req.m < 2 || req.m > n {
        return Err(ApiError::bad_request(format!(
            "`m` must be between 2 and the result count ({n})"
        )));
    }
    let method = match req.method {
        ApiMethod::PrototypeCaption => Method::PrototypeCaption {
            kind: req.prototype_kind.unwrap_or(PrototypeKind::Centroid),
            query_aware: req.query_aware,
        },
        ApiMethod::Groupcap => Method::GroupCap {
            images: state.groupcap_images,
            template: state.prompt.clone(),
            max_tokens: state.max_tokens,
        },
        ApiMethod::Identity => Method::Identity,
    };
    let st = state.clone();
    let clusters = blocking(move || -> Result<Vec<ClusterSuggestion>, ApiError> {
        let partition = kmeans_partition(&session.results, &st.store, req.m, req.seed)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let client = st.client.clone().with_sampling(Sampling {
            seed: req.seed,
            temperature: 0.0,
        });
        let kind = match &method {
            Method::PrototypeCaption { kind, .. } => Some(*kind),
            _ => None,
        };
        let suggester = Suggester::new("api", method, &st.store, Some(&client))
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let outcome = suggester.suggest_all(&req.query_token, &session.query, &partition);
        Ok(partition
            .clusters
            .into_iter()
            .map(|c| {
                let rec = outcome.records.iter().find(|r| r.cluster_id == c.id);
                let err = outcome.failures.iter().find(|f| f.cluster_id == c.id);
                ClusterSuggestion {
                    suggestion: rec.map(|r| r.q_hat.clone()),
                    prototype_kind: rec.and(kind),
                    error: err.map(|f| f.error.clone()),
                    cluster_id: c.id,
                    image_ids: c.image_ids,
                }
            })
            .collect())
    })
    .await??;
    Ok(Json(SuggestResponse { clusters }))
}

const IMAGE_EXTENSIONS: [&str; 5] = ["jpg", "jpeg", "png", "webp", "gif"];

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        Some("svg") => "image/svg+xml",
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

fn safe_component(s: &str) -> bool {
    !s.is_empty() && s != "." && s != ".." && !s.contains(['/', '\\', '\0'])
}

/// Candidate file names for `id`: `<id>`, `<id>.<ext>`, and for numeric ids
/// the zero-padded COCO form `000000123456.<ext>`.
fn candidates(root: &Path, id: &str) -> Vec<PathBuf> {
    let mut names = vec![id.to_string()];
    names.extend(IMAGE_EXTENSIONS.iter().map(|e| format!("{id}.{e}")));
    if id.bytes().all(|b| b.is_ascii_digit()) && id.len() < 12 {
        names.extend(IMAGE_EXTENSIONS.iter().map(|e| format!("{id:0>12}.{e}")));
    }
    names.into_iter().map(|n| root.join(n)).collect()
}

async fn image_handler(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    if !safe_component(&id) || !state.store.contains(&id) {
        return Err(ApiError::not_found(format!("unknown image `{id}`")));
    }
    if let Some(root) = &state.media.root {
        for path in candidates(root, &id) {
            if tokio::fs::metadata(&path)
                .await
                .map(|m| m.is_file())
                .unwrap_or(false)
            {
                let bytes = tokio::fs::read(&path)
                    .await
                    .map_err(|e| ApiError::internal(e.to_string()))?;
                return Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response());
            }
        }
        return Err(ApiError::not_found(format!("no file for image `{id}`")));
    }
    if let Some(t) = &state.media.url_template {
        return Ok(Redirect::temporary(&t.replace("{id}", &id)).into_response());
    }
    Err(ApiError::not_found("no media source configured"))
}

async fn schema_handler(UrlPath(name): UrlPath<String>) -> Result<Response, ApiError> {
    let body = match name.trim_end_matches(".json") {
        "search" => SEARCH_SCHEMA,
        "suggest" => SUGGEST_SCHEMA,
        _ => return Err(ApiError::not_found(format!("unknown schema `{name}`"))),
    };
    Ok(([(header::CONTENT_TYPE, "application/schema+json")], body).into_response())
}

async fn static_handler(
    State(state): State<Arc<AppState>>,
    uri: axum::http::Uri,
) -> Result<Response, ApiError> {
    let Some(dir) = &state.static_dir else {
        return Err(ApiError::not_found("not found"));
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    if !rel.split('/').all(safe_component) {
        return Err(ApiError::not_found("not found"));
    }
    let path = dir.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response()),
        Err(_) => Err(ApiError::not_found("not found")),
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        if e.is_unavailable() {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "backend_unavailable",
                e.to_string(),
            )
        } else {
            ApiError::new(StatusCode::BAD_GATEWAY, "backend_error", e.to_string())
        }
    }
}

impl From<croqs_core::retrieval::RetrievalError> for ApiError {
    fn from(e: croqs_core::retrieval::RetrievalError) -> Self {
        ApiError::new(StatusCode::BAD_GATEWAY, "backend_error", e.to_string())
    }
}
