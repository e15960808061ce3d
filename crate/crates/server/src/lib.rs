//! HTTP surfaces: the `/api/*` exploration service and a `/v1/*` router
//! that serves any model backend over the wire protocol.

pub mod api;
pub mod cache;
pub mod config;
pub mod error;
pub mod sidecar;

use std::sync::Arc;

use croqs_core::backend::{BackendLocator, Capability};
use croqs_core::{Client, EmbeddingStore, StoreFormat};

pub use api::{router, AppState};
pub use config::ServerConfig;
pub use error::ApiError;

/// Loads the store, opens and handshakes the backend, and builds the state.
pub fn build_state(config: &ServerConfig) -> Result<AppState, String> {
    let format = match &config.embeddings_format {
        Some(f) => f.parse::<StoreFormat>().map_err(|e| e.to_string())?,
        None => StoreFormat::from_path(&config.embeddings),
    };
    let store = EmbeddingStore::load(&config.embeddings, format)
        .map_err(|e| format!("{}: {e}", config.embeddings.display()))?;
    let locator = BackendLocator::resolve(config.backend.as_deref()).map_err(|e| e.to_string())?;
    let backend = locator.open(store.dimension()).map_err(|e| e.to_string())?;
    let client = Client::connect(backend, &[Capability::EmbedText, Capability::CaptionVector])
        .map_err(|e| e.to_string())?
        .with_dimension(store.dimension());
    tracing::info!(
        images = store.len(),
        dimension = store.dimension(),
        backend = client.name(),
        "store loaded"
    );
    AppState::new(Arc::new(store), client, config)
}

/// Serves `/api/*` until the process is stopped.
pub async fn serve(config: ServerConfig) -> Result<(), String> {
    let state = tokio::task::spawn_blocking({
        let config = config.clone();
        move || build_state(&config)
    })
    .await
    .map_err(|e| e.to_string())??;
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .map_err(|e| format!("binding {}: {e}", config.listen))?;
    tracing::info!(addr = %config.listen, "listening");
    axum::serve(listener, router(Arc::new(state)))
        .await
        .map_err(|e| e.to_string())
}

/// Serves a backend's `/v1/*` protocol on `addr` until the process is stopped.
pub async fn serve_backend(
    backend: Arc<dyn croqs_core::Backend>,
    addr: std::net::SocketAddr,
) -> Result<(), String> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| format!("binding {addr}: {e}"))?;
    tracing::info!(%addr, backend = backend.name(), "backend protocol listening");
    axum::serve(listener, sidecar::router(backend))
        .await
        .map_err(|e| e.to_string())
}
