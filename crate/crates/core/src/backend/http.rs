//! Blocking HTTP client for a remote model sidecar.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::protocol::{
    request_id, CapabilitiesResponse, CaptionRequest, CompleteRequest, EmbedImageRequest,
    EmbedResponse, EmbedTextRequest, ErrorBody, TextResponse, CAPABILITIES_PATH, CAPTION_PATH,
    COMPLETE_PATH, EMBED_IMAGE_PATH, EMBED_TEXT_PATH, REQUEST_ID_HEADER,
};
use super::{Backend, BackendError};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub base_url: String,
    /// Per-attempt timeout.
    pub timeout: Duration,
    /// Retries after the first attempt, for transport errors, timeouts and 5xx.
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(60),
            max_retries: 2,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .finish()
    }
}

enum Attempt {
    Done(u16, String),
    Retry(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn attempt(&self, path: &str, body: Option<&str>, id: &str) -> Attempt {
        let url = format!("{}{}", self.config.base_url, path);
        let result = match body {
            Some(b) => self
                .agent
                .post(&url)
                .header(REQUEST_ID_HEADER, id)
                .content_type("application/json")
                .send(b),
            None => self.agent.get(&url).header(REQUEST_ID_HEADER, id).call(),
        };
        let mut resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Retry(BackendError::Timeout { attempts: 0 })
            }
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
                return Attempt::Retry(BackendError::Timeout { attempts: 0 })
            }
            Err(e) => return Attempt::Retry(BackendError::Unavailable(format!("{url}: {e}"))),
        };
        let status = resp.status().as_u16();
        match resp.body_mut().read_to_string() {
            Ok(text) if status >= 500 => Attempt::Retry(BackendError::Unavailable(format!(
                "{url}: status {status}: {}",
                error_message(&text)
            ))),
            Ok(text) => Attempt::Done(status, text),
            Err(ureq::Error::Timeout(_)) => Attempt::Retry(BackendError::Timeout { attempts: 0 }),
            Err(e) => Attempt::Retry(BackendError::Unavailable(format!("{url}: {e}"))),
        }
    }

    fn exchange<T: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<String>,
    ) -> Result<T, BackendError> {
        let id = request_id(path, body.as_deref().unwrap_or(""));
        let mut backoff = self.config.initial_backoff;
        let attempts = self.config.max_retries + 1;
        let mut last = BackendError::Unavailable("no attempt made".into());
        for n in 1..=attempts {
            match self.attempt(path, body.as_deref(), &id) {
                Attempt::Done(status, text) => {
                    if !(200..300).contains(&status) {
                        return Err(BackendError::Rejected {
                            status,
                            message: error_message(&text),
                        });
                    }
                    return serde_json::from_str(&text)
                        .map_err(|e| BackendError::Protocol(format!("{path}: {e}")));
                }
                Attempt::Retry(err) => {
                    tracing::warn!(path, attempt = n, error = %err, "backend request failed");
                    last = match err {
                        BackendError::Timeout { .. } => BackendError::Timeout { attempts: n },
                        other => other,
                    };
                    if n < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(last)
    }

    fn post<Req: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        req: &Req,
    ) -> Result<T, BackendError> {
        let body = serde_json::to_string(req).map_err(|e| BackendError::Protocol(e.to_string()))?;
        self.exchange(path, Some(body))
    }
}

fn error_message(body: &str) -> String {
    match serde_json::from_str::<ErrorBody>(body) {
        Ok(e) => format!("{}: {}", e.error.code, e.error.message),
        Err(_) => body.trim().chars().take(200).collect(),
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.config.base_url
    }

    fn capabilities(&self) -> Result<CapabilitiesResponse, BackendError> {
        self.exchange(CAPABILITIES_PATH, None)
    }

    fn embed_text(&self, req: &EmbedTextRequest) -> Result<EmbedResponse, BackendError> {
        self.post(EMBED_TEXT_PATH, req)
    }

    fn embed_image(&self, req: &EmbedImageRequest) -> Result<EmbedResponse, BackendError> {
        self.post(EMBED_IMAGE_PATH, req)
    }

    fn caption(&self, req: &CaptionRequest) -> Result<TextResponse, BackendError> {
        self.post(CAPTION_PATH, req)
    }

    fn complete(&self, req: &CompleteRequest) -> Result<TextResponse, BackendError> {
        self.post(COMPLETE_PATH, req)
    }
}
