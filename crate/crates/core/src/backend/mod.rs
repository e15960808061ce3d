//! Model backends: text/image embedding, caption-from-vector and LLM
//! completion behind one protocol.
//!
//! [`Backend`] is the raw protocol surface, implemented by the HTTP client,
//! the in-process [`MockBackend`], and the [`RecordingBackend`] wrapper.
//! Engine code talks to a [`Client`], which performs the capability handshake,
//! bounds in-flight requests, and enforces the response contract (vector
//! count and dimension, non-empty text, first-line completions).

pub mod http;
pub mod mock;
pub mod protocol;
pub mod recording;

use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};

use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockConfig, ScriptEntry};
pub use protocol::{
    Capability, CapabilitySet, CaptionRequest, CompleteRequest, EmbedImageRequest,
    EmbedTextRequest, Sampling,
};
pub use recording::{RecordingBackend, TranscriptEntry};

use crate::embedding::EmbeddingVector;
use protocol::{CapabilitiesResponse, EmbedResponse, TextResponse};

/// Environment variable consulted when no backend URL is given.
pub const BACKEND_URL_ENV: &str = "CROQS_BACKEND_URL";
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend `{backend}` lacks required capability `{capability}`")]
    MissingCapability {
        backend: String,
        capability: Capability,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("backend returned an empty {0}")]
    EmptyResponse(&'static str),
    #[error("backend returned {found} vector(s) for {expected} input(s)")]
    CountMismatch { expected: usize, found: usize },
    #[error("backend vector dimension {found} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid vector from backend: {0}")]
    InvalidVector(String),
    #[error("cannot open backend `{0}`")]
    BadLocator(String),
}

impl BackendError {
    /// Transport-level failures that a caller may surface as "service
    /// unavailable" rather than a bad request.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, Self::Unavailable(_) | Self::Timeout { .. })
    }
}

/// Raw protocol operations. Implementations must be safe to call from many
/// threads at once.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn capabilities(&self) -> Result<CapabilitiesResponse, BackendError>;
    fn embed_text(&self, req: &EmbedTextRequest) -> Result<EmbedResponse, BackendError>;
    fn embed_image(&self, req: &EmbedImageRequest) -> Result<EmbedResponse, BackendError>;
    fn caption(&self, req: &CaptionRequest) -> Result<TextResponse, BackendError>;
    fn complete(&self, req: &CompleteRequest) -> Result<TextResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn capabilities(&self) -> Result<CapabilitiesResponse, BackendError> {
        (**self).capabilities()
    }
    fn embed_text(&self, req: &EmbedTextRequest) -> Result<EmbedResponse, BackendError> {
        (**self).embed_text(req)
    }
    fn embed_image(&self, req: &EmbedImageRequest) -> Result<EmbedResponse, BackendError> {
        (**self).embed_image(req)
    }
    fn caption(&self, req: &CaptionRequest) -> Result<TextResponse, BackendError> {
        (**self).caption(req)
    }
    fn complete(&self, req: &CompleteRequest) -> Result<TextResponse, BackendError> {
        (**self).complete(req)
    }
}

#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// A handshaken backend with contract checks.
#[derive(Clone)]
pub struct Client {
    backend: Arc<dyn Backend>,
    capabilities: CapabilitySet,
    dimension: Option<usize>,
    sampling: Sampling,
    permits: Arc<Permits>,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("backend", &self.backend.name())
            .field("capabilities", &self.capabilities)
            .field("dimension", &self.dimension)
            .finish()
    }
}

impl Client {
    /// Queries the backend's capabilities and fails if any of `required` is
    /// missing. No other request is sent before this succeeds.
    pub fn connect(
        backend: Arc<dyn Backend>,
        required: &[Capability],
    ) -> Result<Self, BackendError> {
        let caps = backend.capabilities()?;
        for c in required {
            if !caps.capabilities.contains(c) {
                return Err(BackendError::MissingCapability {
                    backend: caps.name.clone(),
                    capability: *c,
                });
            }
        }
        Ok(Self {
            backend,
            capabilities: caps.capabilities,
            dimension: caps.dimension,
            sampling: Sampling::default(),
            permits: Arc::new(Permits::new(DEFAULT_CONCURRENCY)),
        })
    }

    /// Vectors returned by the backend must have this dimension.
    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = Some(dimension);
        self
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_concurrency(mut self, max_in_flight: usize) -> Self {
        self.permits = Arc::new(Permits::new(max_in_flight));
        self
    }

    pub fn name(&self) -> &str {
        self.backend.name()
    }

    pub fn capabilities(&self) -> &CapabilitySet {
        &self.capabilities
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    fn require(&self, c: Capability) -> Result<(), BackendError> {
        if self.capabilities.contains(&c) {
            Ok(())
        } else {
            Err(BackendError::MissingCapability {
                backend: self.name().to_string(),
                capability: c,
            })
        }
    }

    fn vectors(
        &self,
        expected: usize,
        resp: EmbedResponse,
    ) -> Result<Vec<EmbeddingVector>, BackendError> {
        if resp.vectors.len() != expected {
            return Err(BackendError::CountMismatch {
                expected,
                found: resp.vectors.len(),
            });
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if let Some(d) = self.dimension {
                    if v.len() != d {
                        return Err(BackendError::DimensionMismatch {
                            expected: d,
                            found: v.len(),
                        });
                    }
                }
                EmbeddingVector::new(v).map_err(|e| BackendError::InvalidVector(e.to_string()))
            })
            .collect()
    }

    /// One normalized vector per input text, in input order.
    pub fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.require(Capability::EmbedText)?;
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let req = EmbedTextRequest {
            texts: texts.to_vec(),
            sampling: self.sampling,
        };
        let resp = {
            let _permit = self.permits.acquire();
            self.backend.embed_text(&req)?
        };
        self.vectors(texts.len(), resp)
    }

    pub fn embed_image(
        &self,
        req: &EmbedImageRequest,
    ) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.require(Capability::EmbedImage)?;
        let expected = match req {
            EmbedImageRequest::Ids { ids } => ids.len(),
            EmbedImageRequest::Paths { paths } => paths.len(),
        };
        let resp = {
            let _permit = self.permits.acquire();
            self.backend.embed_image(req)?
        };
        self.vectors(expected, resp)
    }

    /// Caption of `vector`, conditioned on `initial_query` when given.
    pub fn caption_vector(
        &self,
        vector: &EmbeddingVector,
        initial_query: Option<&str>,
    ) -> Result<String, BackendError> {
        self.require(Capability::CaptionVector)?;
        let req = CaptionRequest {
            vector: vector.as_slice().to_vec(),
            initial_query: initial_query.map(str::to_string),
            sampling: self.sampling,
        };
        let resp = {
            let _permit = self.permits.acquire();
            self.backend.caption(&req)?
        };
        let text = resp.text.trim();
        if text.is_empty() {
            return Err(BackendError::EmptyResponse("caption"));
        }
        Ok(text.to_string())
    }

    /// First non-empty line of the completion, trimmed.
    pub fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, BackendError> {
        self.require(Capability::Complete)?;
        let req = CompleteRequest {
            prompt: prompt.to_string(),
            max_tokens,
            sampling: self.sampling,
        };
        let resp = {
            let _permit = self.permits.acquire();
            self.backend.complete(&req)?
        };
        resp.text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .map(str::to_string)
            .ok_or(BackendError::EmptyResponse("completion"))
    }
}

/// Where a backend lives, parsed from a command-line or config string.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendLocator {
    /// `http://` or `https://` base URL.
    Http(String),
    /// `mock:` with an optional path to a [`MockConfig`] JSON file.
    Mock(Option<PathBuf>),
}

impl std::str::FromStr for BackendLocator {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Self::Http(s.trim_end_matches('/').to_string()));
        }
        if s == "mock" || s == "mock:" || s == "mock://" {
            return Ok(Self::Mock(None));
        }
        if let Some(path) = s
            .strip_prefix("mock://")
            .or_else(|| s.strip_prefix("mock:"))
        {
            return Ok(Self::Mock(Some(PathBuf::from(path))));
        }
        Err(BackendError::BadLocator(s.to_string()))
    }
}

impl BackendLocator {
    /// Uses `explicit` if given, otherwise [`BACKEND_URL_ENV`].
    pub fn resolve(explicit: Option<&str>) -> Result<Self, BackendError> {
        match explicit {
            Some(s) => s.parse(),
            None => std::env::var(BACKEND_URL_ENV)
                .map_err(|_| {
                    BackendError::BadLocator(format!(
                        "no backend given and {BACKEND_URL_ENV} is unset"
                    ))
                })?
                .parse(),
        }
    }

    /// Instantiates the backend. A bare `mock:` needs the embedding dimension.
    pub fn open(&self, dimension: usize) -> Result<Arc<dyn Backend>, BackendError> {
        match self {
            Self::Http(url) => Ok(Arc::new(HttpBackend::new(HttpConfig::new(url.clone())))),
            Self::Mock(None) => Ok(Arc::new(MockBackend::new(dimension))),
            Self::Mock(Some(path)) => {
                let cfg = MockConfig::load(path)
                    .map_err(|e| BackendError::BadLocator(format!("{}: {e}", path.display())))?;
                let mock = MockBackend::from_config(cfg)
                    .map_err(|e| BackendError::BadLocator(format!("{}: {e}", path.display())))?;
                Ok(Arc::new(mock))
            }
        }
    }
}
