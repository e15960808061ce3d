//! Wire types for the model backend protocol (JSON over HTTP).
//!
//! | method | path | request | response |
//! | ------ | ---- | ------- | -------- |
//! | GET | `/v1/capabilities` | | [`CapabilitiesResponse`] |
//! | POST | `/v1/embed_text` | [`EmbedTextRequest`] | [`EmbedResponse`] |
//! | POST | `/v1/embed_image` | [`EmbedImageRequest`] | [`EmbedResponse`] |
//! | POST | `/v1/caption` | [`CaptionRequest`] | [`TextResponse`] |
//! | POST | `/v1/complete` | [`CompleteRequest`] | [`TextResponse`] |
//!
//! Errors are returned as a non-2xx status with an [`ErrorBody`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub const CAPABILITIES_PATH: &str = "/v1/capabilities";
pub const EMBED_TEXT_PATH: &str = "/v1/embed_text";
pub const EMBED_IMAGE_PATH: &str = "/v1/embed_image";
pub const CAPTION_PATH: &str = "/v1/caption";
pub const COMPLETE_PATH: &str = "/v1/complete";

pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    EmbedText,
    EmbedImage,
    CaptionVector,
    Complete,
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EmbedText => "embed_text",
            Self::EmbedImage => "embed_image",
            Self::CaptionVector => "caption_vector",
            Self::Complete => "complete",
        })
    }
}

pub type CapabilitySet = BTreeSet<Capability>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilitiesResponse {
    pub name: String,
    pub capabilities: CapabilitySet,
    #[serde(default)]
    pub dimension: Option<usize>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

/// Sampling controls carried by every generation request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTextRequest {
    pub texts: Vec<String>,
    #[serde(flatten)]
    pub sampling: Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbedImageRequest {
    Ids { ids: Vec<String> },
    Paths { paths: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

/// Caption a point of the embedding space. `initial_query` asks the captioner
/// to condition on `q0`; `None` requests a plain caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub vector: Vec<f64>,
    pub initial_query: Option<String>,
    #[serde(flatten)]
    pub sampling: Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub prompt: String,
    pub max_tokens: usize,
    #[serde(flatten)]
    pub sampling: Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

/// FNV-1a over `bytes`. Used for content-derived request ids and the mock's
/// hash-seeded embeddings; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Request id derived from the endpoint and serialized body, so retries and
/// replays of the same request carry the same id.
pub fn request_id(path: &str, body: &str) -> String {
    let mut bytes = Vec::with_capacity(path.len() + body.len() + 1);
    bytes.extend_from_slice(path.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(body.as_bytes());
    format!("{:016x}", fnv1a64(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn field_names_are_exact() {
        let caption = CaptionRequest {
            vector: vec![0.6, 0.8],
            initial_query: None,
            sampling: Sampling::default(),
        };
        assert_eq!(
            serde_json::to_string(&caption).unwrap(),
            r#"{"vector":[0.6,0.8],"initial_query":null,"seed":0}"#
        );
        let complete = CompleteRequest {
            prompt: "p".into(),
            max_tokens: 32,
            sampling: Sampling {
                seed: 7,
                temperature: 0.5,
            },
        };
        assert_eq!(
            serde_json::to_string(&complete).unwrap(),
            r#"{"prompt":"p","max_tokens":32,"seed":7,"temperature":0.5}"#
        );
        assert_eq!(
            serde_json::to_string(&EmbedImageRequest::Ids {
                ids: vec!["1".into()]
            })
            .unwrap(),
            r#"{"ids":["1"]}"#
        );
        let caps: CapabilitiesResponse =
            serde_json::from_str(r#"{"name":"x","capabilities":["embed_text","caption_vector"]}"#)
                .unwrap();
        assert!(caps.capabilities.contains(&Capability::CaptionVector));
        assert_eq!(caps.dimension, None);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    proptest! {
        #[test]
        fn requests_round_trip(
            texts in prop::collection::vec(".{0,20}", 0..5),
            vector in prop::collection::vec(-1.0f64..1.0, 0..8),
            q0 in prop::option::of(".{0,20}"),
            seed: u64,
            max_tokens in 1usize..4096,
        ) {
            let sampling = Sampling { seed, temperature: 0.0 };
            let e = EmbedTextRequest { texts, sampling };
            prop_assert_eq!(&serde_json::from_str::<EmbedTextRequest>(&serde_json::to_string(&e).unwrap()).unwrap(), &e);
            let c = CaptionRequest { vector, initial_query: q0.clone(), sampling };
            prop_assert_eq!(&serde_json::from_str::<CaptionRequest>(&serde_json::to_string(&c).unwrap()).unwrap(), &c);
            let p = CompleteRequest { prompt: q0.unwrap_or_default(), max_tokens, sampling };
            prop_assert_eq!(&serde_json::from_str::<CompleteRequest>(&serde_json::to_string(&p).unwrap()).unwrap(), &p);
        }
    }
}
