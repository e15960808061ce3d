//! Wrapper that records every request and response it forwards.

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::protocol::{
    CapabilitiesResponse, CaptionRequest, CompleteRequest, EmbedImageRequest, EmbedResponse,
    EmbedTextRequest, TextResponse, CAPABILITIES_PATH, CAPTION_PATH, COMPLETE_PATH,
    EMBED_IMAGE_PATH, EMBED_TEXT_PATH,
};
use super::{Backend, BackendError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub endpoint: String,
    pub request: Value,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub response: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct RecordingBackend<B> {
    inner: B,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Entries sorted by endpoint then request, so concurrent runs produce
    /// the same transcript.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        let mut entries = self
            .entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone();
        entries.sort_by_cached_key(|e| (e.endpoint.clone(), e.request.to_string()));
        entries
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for entry in self.transcript() {
            serde_json::to_writer(&mut out, &entry)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    fn record<Req: Serialize, Resp: Serialize + Clone>(
        &self,
        endpoint: &str,
        req: &Req,
        result: Result<Resp, BackendError>,
    ) -> Result<Resp, BackendError> {
        let (response, error) = match &result {
            Ok(r) => (serde_json::to_value(r).ok(), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let entry = TranscriptEntry {
            endpoint: endpoint.to_string(),
            request: serde_json::to_value(req).unwrap_or(Value::Null),
            response,
            error,
        };
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(entry);
        result
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn capabilities(&self) -> Result<CapabilitiesResponse, BackendError> {
        self.record(CAPABILITIES_PATH, &Value::Null, self.inner.capabilities())
    }

    fn embed_text(&self, req: &EmbedTextRequest) -> Result<EmbedResponse, BackendError> {
        self.record(EMBED_TEXT_PATH, req, self.inner.embed_text(req))
    }

    fn embed_image(&self, req: &EmbedImageRequest) -> Result<EmbedResponse, BackendError> {
        self.record(EMBED_IMAGE_PATH, req, self.inner.embed_image(req))
    }

    fn caption(&self, req: &CaptionRequest) -> Result<TextResponse, BackendError> {
        self.record(CAPTION_PATH, req, self.inner.caption(req))
    }

    fn complete(&self, req: &CompleteRequest) -> Result<TextResponse, BackendError> {
        self.record(COMPLETE_PATH, req, self.inner.complete(req))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, Sampling};

    #[test]
    fn transcript_is_sorted_and_complete() {
        let rec = RecordingBackend::new(MockBackend::new(4));
        for t in ["zebra", "apple"] {
            rec.embed_text(&EmbedTextRequest {
                texts: vec![t.into()],
                sampling: Sampling::default(),
            })
            .unwrap();
        }
        let err = rec.complete(&CompleteRequest {
            prompt: "no marker".into(),
            max_tokens: 8,
            sampling: Sampling::default(),
        });
        assert!(err.is_err());
        let t = rec.transcript();
        assert_eq!(t.len(), 3);
        assert_eq!(t[0].endpoint, COMPLETE_PATH);
        assert!(t[0].error.is_some());
        assert_eq!(t[1].request["texts"][0], "apple");
        assert_eq!(t[2].request["texts"][0], "zebra");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        rec.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back: Vec<TranscriptEntry> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(back, t);
    }
}
