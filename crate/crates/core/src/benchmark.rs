//! Benchmark data model: initial queries, their curated image clusters and
//! the human suggestion written for each cluster.
//!
//! Canonical on-disk schema:
//!
//! ```json
//! {"version": 1, "image_namespace": "coco-train2017",
//!  "queries": [{"id": "q01", "text": "a sport race",
//!               "clusters": [{"id": "c1", "human_suggestion": "a bike race",
//!                             "image_ids": ["000000123", "..."]}]}]}
//! ```

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clustering::{Cluster, ClusterPartition, PartitionSource};
use crate::embedding::EmbeddingStore;

pub const SCHEMA_VERSION: u32 = 1;
pub const MIN_CLUSTERS_PER_QUERY: usize = 2;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("schema violation at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },
    #[error("query `{query}`: image `{image}` appears in clusters `{first}` and `{second}`")]
    Overlap {
        query: String,
        image: String,
        first: String,
        second: String,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn schema_err(pointer: impl Into<String>, message: impl Into<String>) -> BenchmarkError {
    BenchmarkError::Schema {
        pointer: pointer.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkCluster {
    pub id: String,
    pub human_suggestion: String,
    pub image_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkEntry {
    pub id: String,
    pub text: String,
    pub clusters: Vec<BenchmarkCluster>,
}

impl BenchmarkEntry {
    pub fn partition(&self) -> ClusterPartition {
        ClusterPartition {
            clusters: self
                .clusters
                .iter()
                .map(|c| Cluster {
                    id: c.id.clone(),
                    image_ids: c.image_ids.clone(),
                    human_suggestion: Some(c.human_suggestion.clone()),
                })
                .collect(),
            source: PartitionSource::Benchmark,
        }
    }

    pub fn cluster(&self, id: &str) -> Option<&BenchmarkCluster> {
        self.clusters.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Benchmark {
    pub version: u32,
    pub image_namespace: String,
    pub queries: Vec<BenchmarkEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkStats {
    pub queries: usize,
    pub clusters: usize,
    pub mean_clusters_per_query: f64,
    pub min_clusters_per_query: usize,
    pub max_clusters_per_query: usize,
    pub image_references: usize,
}

impl Benchmark {
    /// Loads and validates a canonical benchmark file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchmarkError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, BenchmarkError> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, BenchmarkError> {
        let bench: Benchmark = serde_path_to_error::deserialize(value).map_err(|e| {
            let pointer = json_pointer(&e.path().to_string());
            schema_err(pointer, e.into_inner().to_string())
        })?;
        bench.validate()?;
        Ok(bench)
    }

    /// Loads the published release format through [`adapt_release`].
    pub fn load_release(path: impl AsRef<Path>) -> Result<Self, BenchmarkError> {
        let text = std::fs::read_to_string(path)?;
        let value: Value = serde_json::from_str(&text)?;
        let bench = adapt_release(&value)?;
        bench.validate()?;
        Ok(bench)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BenchmarkError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), BenchmarkError> {
        if self.version != SCHEMA_VERSION {
            return Err(schema_err(
                "/version",
                format!(
                    "unsupported version {}, expected {SCHEMA_VERSION}",
                    self.version
                ),
            ));
        }
        let mut query_ids = HashSet::new();
        for (qi, q) in self.queries.iter().enumerate() {
            let qp = format!("/queries/{qi}");
            if q.id.is_empty() {
                return Err(schema_err(format!("{qp}/id"), "query id is empty"));
            }
            if !query_ids.insert(q.id.as_str()) {
                return Err(schema_err(
                    format!("{qp}/id"),
                    format!("duplicate query id `{}`", q.id),
                ));
            }
            if q.text.trim().is_empty() {
                return Err(schema_err(
                    format!("{qp}/text"),
                    "initial query text is empty",
                ));
            }
            if q.clusters.len() < MIN_CLUSTERS_PER_QUERY {
                return Err(schema_err(
                    format!("{qp}/clusters"),
                    format!(
                        "query `{}` has {} cluster(s), at least {MIN_CLUSTERS_PER_QUERY} required",
                        q.id,
                        q.clusters.len()
                    ),
                ));
            }
            let mut cluster_ids = HashSet::new();
            let mut owner: HashMap<&str, &str> = HashMap::new();
            for (ci, c) in q.clusters.iter().enumerate() {
                let cp = format!("{qp}/clusters/{ci}");
                if !cluster_ids.insert(c.id.as_str()) {
                    return Err(schema_err(
                        format!("{cp}/id"),
                        format!("duplicate cluster id `{}`", c.id),
                    ));
                }
                if c.human_suggestion.trim().is_empty() {
                    return Err(schema_err(
                        format!("{cp}/human_suggestion"),
                        "human suggestion is empty",
                    ));
                }
                if c.image_ids.is_empty() {
                    return Err(schema_err(
                        format!("{cp}/image_ids"),
                        format!("cluster `{}` is empty", c.id),
                    ));
                }
                for img in &c.image_ids {
                    if let Some(prev) = owner.insert(img, &c.id) {
                        if prev == c.id {
                            return Err(schema_err(
                                format!("{cp}/image_ids"),
                                format!("image `{img}` listed twice in cluster `{}`", c.id),
                            ));
                        }
                        return Err(BenchmarkError::Overlap {
                            query: q.id.clone(),
                            image: img.clone(),
                            first: prev.to_string(),
                            second: c.id.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> BenchmarkStats {
        let counts: Vec<usize> = self.queries.iter().map(|q| q.clusters.len()).collect();
        let clusters: usize = counts.iter().sum();
        BenchmarkStats {
            queries: self.queries.len(),
            clusters,
            mean_clusters_per_query: if counts.is_empty() {
                0.0
            } else {
                clusters as f64 / counts.len() as f64
            },
            min_clusters_per_query: counts.iter().copied().min().unwrap_or(0),
            max_clusters_per_query: counts.iter().copied().max().unwrap_or(0),
            image_references: self
                .queries
                .iter()
                .flat_map(|q| &q.clusters)
                .map(|c| c.image_ids.len())
                .sum(),
        }
    }

    pub fn entry(&self, query_id: &str) -> Option<&BenchmarkEntry> {
        self.queries.iter().find(|q| q.id == query_id)
    }

    /// Every image reference missing from `store`, one per reference, in
    /// file order.
    pub fn validate_against_store(&self, store: &EmbeddingStore) -> Vec<String> {
        self.queries
            .iter()
            .flat_map(|q| &q.clusters)
            .flat_map(|c| &c.image_ids)
            .filter(|id| !store.contains(id))
            .cloned()
            .collect()
    }
}

/// `queries[0].clusters[1].id` -> `/queries/0/clusters/1/id`
fn json_pointer(path: &str) -> String {
    if path == "." || path.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    for seg in path.split('.') {
        let mut rest = seg;
        if let Some(bracket) = rest.find('[') {
            let (name, idx) = rest.split_at(bracket);
            if !name.is_empty() {
                out.push('/');
                out.push_str(name);
            }
            rest = idx;
            for part in rest.split('[').filter(|p| !p.is_empty()) {
                out.push('/');
                out.push_str(part.trim_end_matches(']'));
            }
        } else {
            out.push('/');
            out.push_str(rest);
        }
    }
    out
}

const TEXT_KEYS: &[&str] = &["text", "query", "initial_query", "q0", "query_text"];
const CLUSTER_KEYS: &[&str] = &["clusters", "groups", "semantic_clusters"];
const SUGGESTION_KEYS: &[&str] = &[
    "human_suggestion",
    "suggestion",
    "suggested_query",
    "human_query",
    "annotation",
    "label",
];
const IMAGE_KEYS: &[&str] = &["image_ids", "images", "ids", "coco_ids", "image_id_list"];

fn field<'a>(
    obj: &'a serde_json::Map<String, Value>,
    keys: &[&str],
) -> Option<(&'a str, &'a Value)> {
    keys.iter()
        .find_map(|k| obj.get_key_value(*k).map(|(k, v)| (k.as_str(), v)))
}

fn id_string(v: &Value, pointer: &str) -> Result<String, BenchmarkError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Object(o) => o
            .get("id")
            .or_else(|| o.get("image_id"))
            .map(|x| id_string(x, pointer))
            .unwrap_or_else(|| Err(schema_err(pointer, "image object without `id`"))),
        _ => Err(schema_err(pointer, "image id must be a string or number")),
    }
}

/// Converts a release-style benchmark file into the canonical schema.
///
/// Canonical files pass through. Otherwise the top level may be a list of
/// query objects, an object with a `queries` list, or an object keyed by
/// query text. Clusters may be a list or an object keyed by cluster name;
/// a bare list of image ids under a cluster key is accepted when the key
/// itself is the human suggestion. Common field spellings are recognized
/// (`query`/`text`, `suggestion`/`human_suggestion`, `images`/`image_ids`)
/// and numeric image ids are kept as their decimal string.
pub fn adapt_release(value: &Value) -> Result<Benchmark, BenchmarkError> {
    if let Some(obj) = value.as_object() {
        if obj.contains_key("version") && obj.contains_key("queries") {
            return Benchmark::from_value(value.clone());
        }
    }
    let raw_queries: Vec<(Option<String>, String, &Value)> = match value {
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| (None, format!("/{i}"), v))
            .collect(),
        Value::Object(obj) => match obj.get("queries") {
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| (None, format!("/queries/{i}"), v))
                .collect(),
            // scalar entries such as `image_namespace` are metadata
            _ => obj
                .iter()
                .filter(|(_, v)| v.is_object() || v.is_array())
                .map(|(k, v)| (Some(k.clone()), format!("/{}", escape_pointer(k)), v))
                .collect(),
        },
        _ => return Err(schema_err("", "expected an array or object of queries")),
    };

    let namespace = value
        .get("image_namespace")
        .and_then(Value::as_str)
        .unwrap_or("coco-train2017")
        .to_string();

    let width = raw_queries.len().to_string().len().max(2);
    let mut queries = Vec::with_capacity(raw_queries.len());
    for (qi, (key, pointer, qv)) in raw_queries.into_iter().enumerate() {
        let (text, clusters_value, qid) = match qv {
            Value::Object(q) => {
                let text = field(q, TEXT_KEYS)
                    .and_then(|(_, v)| v.as_str())
                    .map(str::to_string)
                    .or(key.clone())
                    .ok_or_else(|| schema_err(&pointer, "query without text"))?;
                let (ck, clusters) = field(q, CLUSTER_KEYS)
                    .ok_or_else(|| schema_err(&pointer, "query without clusters"))?;
                let qid = q.get("id").map(|v| id_string(v, &pointer)).transpose()?;
                (text, (format!("{pointer}/{ck}"), clusters), qid)
            }
            Value::Array(_) => {
                let text = key
                    .clone()
                    .ok_or_else(|| schema_err(&pointer, "query without text"))?;
                (text, (pointer.clone(), qv), None)
            }
            _ => return Err(schema_err(&pointer, "query must be an object")),
        };
        let clusters = adapt_clusters(&clusters_value.0, clusters_value.1)?;
        queries.push(BenchmarkEntry {
            id: qid.unwrap_or_else(|| format!("q{:0width$}", qi + 1)),
            text,
            clusters,
        });
    }
    Ok(Benchmark {
        version: SCHEMA_VERSION,
        image_namespace: namespace,
        queries,
    })
}

fn adapt_clusters(pointer: &str, value: &Value) -> Result<Vec<BenchmarkCluster>, BenchmarkError> {
    let items: Vec<(Option<&str>, String, &Value)> = match value {
        Value::Array(a) => a
            .iter()
            .enumerate()
            .map(|(i, v)| (None, format!("{pointer}/{i}"), v))
            .collect(),
        Value::Object(o) => o
            .iter()
            .map(|(k, v)| {
                (
                    Some(k.as_str()),
                    format!("{pointer}/{}", escape_pointer(k)),
                    v,
                )
            })
            .collect(),
        _ => return Err(schema_err(pointer, "clusters must be an array or object")),
    };
    let width = items.len().to_string().len().max(2);
    items
        .into_iter()
        .enumerate()
        .map(|(ci, (key, cp, cv))| {
            let (suggestion, images, cid) = match cv {
                Value::Object(c) => {
                    let suggestion = field(c, SUGGESTION_KEYS)
                        .and_then(|(_, v)| v.as_str())
                        .or(key)
                        .ok_or_else(|| schema_err(&cp, "cluster without human suggestion"))?;
                    let (ik, images) = field(c, IMAGE_KEYS)
                        .ok_or_else(|| schema_err(&cp, "cluster without images"))?;
                    let cid = c.get("id").map(|v| id_string(v, &cp)).transpose()?;
                    (suggestion.to_string(), (format!("{cp}/{ik}"), images), cid)
                }
                Value::Array(_) => {
                    let suggestion =
                        key.ok_or_else(|| schema_err(&cp, "cluster without human suggestion"))?;
                    (suggestion.to_string(), (cp.clone(), cv), None)
                }
                _ => return Err(schema_err(&cp, "cluster must be an object")),
            };
            let image_ids = images
                .1
                .as_array()
                .ok_or_else(|| schema_err(&images.0, "images must be an array"))?
                .iter()
                .enumerate()
                .map(|(ii, v)| id_string(v, &format!("{}/{ii}", images.0)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(BenchmarkCluster {
                id: cid.unwrap_or_else(|| format!("c{:0width$}", ci + 1)),
                human_suggestion: suggestion,
                image_ids,
            })
        })
        .collect()
}

fn escape_pointer(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}
