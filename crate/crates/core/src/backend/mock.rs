//! Deterministic stand-in for the model sidecar.
//!
//! Rules:
//! * `embed_text`: a registered phrase returns its vector; anything else gets
//!   a unit vector drawn from a ChaCha stream seeded by the FNV-1a hash of the
//!   text, so it is stable across runs and platforms.
//! * `embed_image`: registered image vectors, otherwise hash-seeded from
//!   `image:<id>`.
//! * `caption`: the registered concept with the highest cosine to the vector
//!   (ties go to the lexicographically smaller name). Plain captions read
//!   `a <concept>`; with an initial query they read `<q0>, <concept>`.
//! * `complete`: the prompt must contain a `Suggestion:` marker. The request
//!   block is the text between the previous marker line and the last marker.
//!   The first script entry whose `when` occurs in that block answers with the
//!   text after the last `Suggestion:` of its reply (or the whole reply).
//!   Without a match the last non-empty line of the block is echoed, minus a
//!   leading list dash.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::protocol::{
    fnv1a64, CapabilitiesResponse, Capability, CaptionRequest, CompleteRequest, EmbedImageRequest,
    EmbedResponse, EmbedTextRequest, TextResponse,
};
use super::{Backend, BackendError};
use crate::embedding::{dot, EmbeddingVector};

pub const SUGGESTION_MARKER: &str = "Suggestion:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub when: String,
    pub reply: String,
}

/// File form of a mock backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dimension: usize,
    #[serde(default)]
    pub phrases: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub concepts: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub images: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<BTreeSet<Capability>>,
}

fn default_name() -> String {
    "mock".to_string()
}

impl MockConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text + "\n")
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    name: String,
    dimension: usize,
    phrases: BTreeMap<String, Vec<f64>>,
    concepts: BTreeMap<String, Vec<f64>>,
    images: BTreeMap<String, Vec<f64>>,
    script: Vec<ScriptEntry>,
    capabilities: BTreeSet<Capability>,
}

fn unit(values: Vec<f64>, what: &str) -> Vec<f64> {
    EmbeddingVector::new(values)
        .unwrap_or_else(|e| panic!("mock {what}: {e}"))
        .into_inner()
}

impl MockBackend {
    pub fn new(dimension: usize) -> Self {
        Self {
            name: default_name(),
            dimension,
            phrases: BTreeMap::new(),
            concepts: BTreeMap::new(),
            images: BTreeMap::new(),
            script: Vec::new(),
            capabilities: [
                Capability::EmbedText,
                Capability::EmbedImage,
                Capability::CaptionVector,
                Capability::Complete,
            ]
            .into_iter()
            .collect(),
        }
    }

    pub fn from_config(cfg: MockConfig) -> Result<Self, String> {
        let mut m = Self::new(cfg.dimension);
        m.name = cfg.name;
        let check = |kind: &str, key: &str, v: Vec<f64>| -> Result<Vec<f64>, String> {
            if v.len() != cfg.dimension {
                return Err(format!(
                    "{kind} `{key}` has dimension {}, expected {}",
                    v.len(),
                    cfg.dimension
                ));
            }
            EmbeddingVector::new(v)
                .map(EmbeddingVector::into_inner)
                .map_err(|e| format!("{kind} `{key}`: {e}"))
        };
        for (k, v) in cfg.phrases {
            let v = check("phrase", &k, v)?;
            m.phrases.insert(k, v);
        }
        for (k, v) in cfg.concepts {
            let v = check("concept", &k, v)?;
            m.concepts.insert(k, v);
        }
        for (k, v) in cfg.images {
            let v = check("image", &k, v)?;
            m.images.insert(k, v);
        }
        m.script = cfg.script;
        if let Some(caps) = cfg.capabilities {
            m.capabilities = caps;
        }
        Ok(m)
    }

    pub fn to_config(&self) -> MockConfig {
        MockConfig {
            name: self.name.clone(),
            dimension: self.dimension,
            phrases: self.phrases.clone(),
            concepts: self.concepts.clone(),
            images: self.images.clone(),
            script: self.script.clone(),
            capabilities: Some(self.capabilities.clone()),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn checked(&self, v: Vec<f64>, what: &str) -> Vec<f64> {
        assert_eq!(v.len(), self.dimension, "mock {what}: wrong dimension");
        unit(v, what)
    }

    pub fn with_phrase(mut self, text: impl Into<String>, v: Vec<f64>) -> Self {
        let v = self.checked(v, "phrase");
        self.phrases.insert(text.into(), v);
        self
    }

    pub fn with_concept(mut self, name: impl Into<String>, v: Vec<f64>) -> Self {
        let v = self.checked(v, "concept");
        self.concepts.insert(name.into(), v);
        self
    }

    pub fn with_image(mut self, id: impl Into<String>, v: Vec<f64>) -> Self {
        let v = self.checked(v, "image");
        self.images.insert(id.into(), v);
        self
    }

    pub fn with_script(mut self, when: impl Into<String>, reply: impl Into<String>) -> Self {
        self.script.push(ScriptEntry {
            when: when.into(),
            reply: reply.into(),
        });
        self
    }

    pub fn with_capabilities(mut self, caps: impl IntoIterator<Item = Capability>) -> Self {
        self.capabilities = caps.into_iter().collect();
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// The unit vector the mock assigns to unregistered `text`.
    pub fn hashed_vector(&self, text: &str) -> Vec<f64> {
        hashed_unit_vector(text, self.dimension)
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        self.phrases
            .get(text)
            .cloned()
            .unwrap_or_else(|| self.hashed_vector(text))
    }

    fn check_capability(&self, c: Capability) -> Result<(), BackendError> {
        if self.capabilities.contains(&c) {
            Ok(())
        } else {
            Err(BackendError::Rejected {
                status: 501,
                message: format!("capability `{c}` not available"),
            })
        }
    }

    /// Nearest registered concept to `vector`.
    pub fn nearest_concept(&self, vector: &[f64]) -> Option<&str> {
        let mut best: Option<(&str, f64)> = None;
        for (name, v) in &self.concepts {
            let s = dot(vector, v);
            // BTreeMap order: strict `>` keeps the smaller name on ties
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((name, s));
            }
        }
        best.map(|(n, _)| n)
    }
}

/// Deterministic unit vector for `text` in `dimension` dimensions.
pub fn hashed_unit_vector(text: &str, dimension: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(text.as_bytes()));
    loop {
        let v: Vec<f64> = (0..dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        if let Ok(v) = EmbeddingVector::new(v) {
            return v.into_inner();
        }
    }
}

fn after_last_marker(text: &str) -> Option<&str> {
    text.rfind(SUGGESTION_MARKER)
        .map(|i| &text[i + SUGGESTION_MARKER.len()..])
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn capabilities(&self) -> Result<CapabilitiesResponse, BackendError> {
        Ok(CapabilitiesResponse {
            name: self.name.clone(),
            capabilities: self.capabilities.clone(),
            dimension: Some(self.dimension),
        })
    }

    fn embed_text(&self, req: &EmbedTextRequest) -> Result<EmbedResponse, BackendError> {
        self.check_capability(Capability::EmbedText)?;
        Ok(EmbedResponse {
            vectors: req.texts.iter().map(|t| self.embed_one(t)).collect(),
        })
    }

    fn embed_image(&self, req: &EmbedImageRequest) -> Result<EmbedResponse, BackendError> {
        self.check_capability(Capability::EmbedImage)?;
        let keys = match req {
            EmbedImageRequest::Ids { ids } => ids,
            EmbedImageRequest::Paths { paths } => paths,
        };
        Ok(EmbedResponse {
            vectors: keys
                .iter()
                .map(|k| {
                    self.images
                        .get(k)
                        .cloned()
                        .unwrap_or_else(|| self.hashed_vector(&format!("image:{k}")))
                })
                .collect(),
        })
    }

    fn caption(&self, req: &CaptionRequest) -> Result<TextResponse, BackendError> {
        self.check_capability(Capability::CaptionVector)?;
        if req.vector.len() != self.dimension {
            return Err(BackendError::Rejected {
                status: 400,
                message: format!(
                    "vector dimension {} != {}",
                    req.vector.len(),
                    self.dimension
                ),
            });
        }
        let concept = self
            .nearest_concept(&req.vector)
            .ok_or_else(|| BackendError::Protocol("mock has no registered concepts".into()))?;
        let text = match &req.initial_query {
            Some(q0) => format!("{q0}, {concept}"),
            None => format!("a {concept}"),
        };
        Ok(TextResponse { text })
    }

    fn complete(&self, req: &CompleteRequest) -> Result<TextResponse, BackendError> {
        self.check_capability(Capability::Complete)?;
        let last = req.prompt.rfind(SUGGESTION_MARKER).ok_or_else(|| {
            BackendError::Protocol(format!("prompt has no `{SUGGESTION_MARKER}` marker"))
        })?;
        let head = &req.prompt[..last];
        let block_start = head
            .rfind(SUGGESTION_MARKER)
            .map(|i| head[i..].find('\n').map_or(head.len(), |n| i + n + 1))
            .unwrap_or(0);
        let block = &head[block_start..];

        if let Some(entry) = self.script.iter().find(|e| block.contains(&e.when)) {
            let text = after_last_marker(&entry.reply).unwrap_or(&entry.reply);
            return Ok(TextResponse {
                text: text.trim().to_string(),
            });
        }
        let echo = block
            .lines()
            .map(str::trim)
            .rfind(|l| !l.is_empty())
            .map(|l| l.trim_start_matches('-').trim().to_string())
            .unwrap_or_default();
        Ok(TextResponse { text: echo })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::protocol::Sampling;

    fn caption(m: &MockBackend, v: Vec<f64>, q0: Option<&str>) -> String {
        m.caption(&CaptionRequest {
            vector: v,
            initial_query: q0.map(String::from),
            sampling: Sampling::default(),
        })
        .unwrap()
        .text
    }

    fn complete(m: &MockBackend, prompt: &str) -> Result<String, BackendError> {
        m.complete(&CompleteRequest {
            prompt: prompt.into(),
            max_tokens: 16,
            sampling: Sampling::default(),
        })
        .map(|r| r.text)
    }

    fn two_concepts() -> MockBackend {
        MockBackend::new(2)
            .with_concept("skiing race", vec![1.0, 0.0])
            .with_concept("bike race", vec![0.0, 1.0])
    }

    #[test]
    fn registered_and_hashed_phrases() {
        let m = MockBackend::new(3).with_phrase("bike race", vec![0.0, 0.0, 2.0]);
        let req = EmbedTextRequest {
            texts: vec!["bike race".into(), "unknown".into(), "unknown".into()],
            sampling: Sampling::default(),
        };
        let r = m.embed_text(&req).unwrap();
        assert_eq!(r.vectors[0], vec![0.0, 0.0, 1.0]);
        assert_eq!(r.vectors[1], r.vectors[2]);
        assert_eq!(r.vectors[1], hashed_unit_vector("unknown", 3));
        let again = MockBackend::new(3).embed_text(&req).unwrap();
        assert_eq!(again.vectors[1], r.vectors[1]);
    }

    #[test]
    fn nearest_concept_captions() {
        let m = two_concepts();
        assert_eq!(caption(&m, vec![0.9, 0.1], None), "a skiing race");
        assert_eq!(
            caption(&m, vec![0.9, 0.1], Some("a sport race")),
            "a sport race, skiing race"
        );
        // equidistant: "bike race" < "skiing race"
        let d = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(caption(&m, vec![d, d], None), "a bike race");
    }

    #[test]
    fn scripted_completion() {
        let m = MockBackend::new(2).with_script("a sport race", "Sure. Suggestion: a bike race");
        let prompt = "Initial query: x\nSuggestion: y\n\nInitial query: a sport race\nCaptions:\n- a bike\nSuggestion:";
        assert_eq!(complete(&m, prompt).unwrap(), "a bike race");
        // the example block mentioning "x" is not the request block
        let m = MockBackend::new(2).with_script("Initial query: x", "wrong");
        assert_eq!(complete(&m, prompt).unwrap(), "a bike");
    }

    #[test]
    fn completion_without_marker_is_a_protocol_error() {
        assert!(matches!(
            complete(&MockBackend::new(2), "no marker here"),
            Err(BackendError::Protocol(_))
        ));
    }

    #[test]
    fn missing_capability_is_rejected() {
        let m = two_concepts().with_capabilities([Capability::EmbedText]);
        assert!(matches!(
            complete(&m, "Suggestion:"),
            Err(BackendError::Rejected { status: 501, .. })
        ));
    }

    #[test]
    fn config_round_trip() {
        let m = two_concepts()
            .with_phrase("p", vec![3.0, 4.0])
            .with_script("a", "b");
        let cfg = m.to_config();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: MockConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(MockBackend::from_config(back).unwrap().to_config(), cfg);
        let mut bad = cfg.clone();
        bad.phrases.insert("short".into(), vec![1.0]);
        assert!(MockBackend::from_config(bad).unwrap_err().contains("short"));
    }
}
