//! Turning one cluster of a result set into one suggested query.
//!
//! Two generated families are supported: captioning a cluster prototype, and
//! GroupCap (caption the most representative members, then ask an LLM to
//! summarize them against the initial query). `human` and `identity` are
//! reference methods that need no backend.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Client};
use crate::benchmark::Benchmark;
use crate::clustering::{Cluster, ClusterPartition};
use crate::embedding::EmbeddingStore;
use crate::prototype::{
    prototype, top_m_representatives, PrototypeError, PrototypeKind, DEFAULT_GROUPCAP_IMAGES,
};

pub const DEFAULT_MAX_TOKENS: usize = 32;

const DEFAULT_TEMPLATE: &str = include_str!("../prompts/groupcap.txt");
const DEFAULT_EXAMPLES: &str = include_str!("../prompts/groupcap_examples.json");
const PLACEHOLDERS: [&str; 3] = ["q0", "captions", "examples"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionMethod {
    PrototypeCaption,
    Groupcap,
    Human,
    Identity,
}

impl std::fmt::Display for SuggestionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PrototypeCaption => "prototype_caption",
            Self::Groupcap => "groupcap",
            Self::Human => "human",
            Self::Identity => "identity",
        })
    }
}

/// One generated query with enough provenance to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionRecord {
    pub query_id: String,
    pub cluster_id: String,
    pub method: SuggestionMethod,
    /// Name the method is reported under, e.g. `clipcap` or `groupcap_mistral`.
    pub method_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototype_kind: Option<PrototypeKind>,
    #[serde(default)]
    pub query_aware: bool,
    pub q_hat: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub backend_name: String,
    #[serde(default)]
    pub seed: u64,
    /// Representative member used as the prototype.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototype_member: Option<String>,
    /// Images captioned for GroupCap, in prompt order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selected_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prototype,
    Select,
    Caption,
    Complete,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Prototype => "prototype",
            Self::Select => "select",
            Self::Caption => "caption",
            Self::Complete => "complete",
        })
    }
}

#[derive(Debug, Error)]
pub enum SuggestError {
    #[error("{stage} stage failed: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("{stage} stage failed: {source}")]
    Prototype {
        stage: Stage,
        #[source]
        source: PrototypeError,
    },
    #[error("{0} stage produced an empty suggestion")]
    EmptySuggestion(Stage),
    #[error("cluster `{0}` has no human suggestion")]
    MissingHumanSuggestion(String),
    #[error("method `{0}` needs a backend")]
    NoBackend(String),
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown placeholder `{{{0}}}` in prompt template")]
    UnknownPlaceholder(String),
    #[error("prompt template lacks `{{{0}}}`")]
    MissingPlaceholder(&'static str),
    #[error("few-shot examples: {0}")]
    Examples(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub query: String,
    pub captions: Vec<String>,
    pub suggestion: String,
}

/// GroupCap prompt: text with `{q0}`, `{captions}` and `{examples}`
/// placeholders plus the few-shot examples substituted for `{examples}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
    examples: Vec<FewShotExample>,
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

/// Splits on `{name}` where name is lowercase ASCII, digits or `_`. Any
/// other brace is literal text.
fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'))
            .unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            out.push(Piece::Literal(&rest[..open]));
            out.push(Piece::Slot(&after[..name_len]));
            rest = &after[name_len + 1..];
        } else {
            out.push(Piece::Literal(&rest[..=open]));
            rest = after;
        }
    }
    out.push(Piece::Literal(rest));
    out
}

fn bullet_list(items: &[String]) -> String {
    items
        .iter()
        .map(|c| format!("- {c}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl PromptTemplate {
    pub fn new(
        text: impl Into<String>,
        examples: Vec<FewShotExample>,
    ) -> Result<Self, TemplateError> {
        let text = text.into();
        let mut seen = Vec::new();
        for p in pieces(&text) {
            if let Piece::Slot(name) = p {
                if !PLACEHOLDERS.contains(&name) {
                    return Err(TemplateError::UnknownPlaceholder(name.to_string()));
                }
                seen.push(name);
            }
        }
        for required in ["q0", "captions"] {
            if !seen.contains(&required) {
                return Err(TemplateError::MissingPlaceholder(required));
            }
        }
        Ok(Self { text, examples })
    }

    /// Reads a template file and, optionally, a JSON array of examples. The
    /// shipped examples are used when `examples` is `None`.
    pub fn load(
        template: impl AsRef<Path>,
        examples: Option<&Path>,
    ) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(template)?;
        let examples = match examples {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => serde_json::from_str(DEFAULT_EXAMPLES)?,
        };
        Self::new(text, examples)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn examples(&self) -> &[FewShotExample] {
        &self.examples
    }

    /// Few-shot block: one `Initial query / Captions / Suggestion` stanza per
    /// example, separated by blank lines.
    pub fn render_examples(&self) -> String {
        self.examples
            .iter()
            .map(|e| {
                format!(
                    "Initial query: {}\nCaptions:\n{}\nSuggestion: {}",
                    e.query,
                    bullet_list(&e.captions),
                    e.suggestion
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Substitutes placeholders in one pass, so text inside `q0` or the
    /// captions is never re-expanded.
    pub fn render(&self, q0: &str, captions: &[String]) -> String {
        let captions = bullet_list(captions);
        let examples = self.render_examples();
        let mut out = String::with_capacity(self.text.len() + captions.len() + examples.len());
        for p in pieces(&self.text) {
            match p {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot("q0") => out.push_str(q0),
                Piece::Slot("captions") => out.push_str(&captions),
                Piece::Slot("examples") => out.push_str(&examples),
                Piece::Slot(other) => unreachable!("validated placeholder {other}"),
            }
        }
        out
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        let examples = serde_json::from_str(DEFAULT_EXAMPLES).expect("shipped examples parse");
        Self::new(DEFAULT_TEMPLATE, examples).expect("shipped template is valid")
    }
}

/// Trims, strips matching surrounding quotes and collapses inner whitespace.
pub fn clean_suggestion(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let mut chars = s.chars();
        let (Some(first), Some(last)) = (chars.next(), chars.next_back()) else {
            break;
        };
        let pair = matches!(
            (first, last),
            ('"', '"')
                | ('\'', '\'')
                | ('`', '`')
                | ('\u{201c}', '\u{201d}')
                | ('\u{2018}', '\u{2019}')
        );
        if !pair {
            break;
        }
        s = s[first.len_utf8()..s.len() - last.len_utf8()].trim();
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    PrototypeCaption {
        kind: PrototypeKind,
        query_aware: bool,
    },
    GroupCap {
        images: usize,
        template: PromptTemplate,
        max_tokens: usize,
    },
    Human,
    Identity,
}

impl Method {
    pub fn groupcap() -> Self {
        Self::GroupCap {
            images: DEFAULT_GROUPCAP_IMAGES,
            template: PromptTemplate::default(),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn kind(&self) -> SuggestionMethod {
        match self {
            Self::PrototypeCaption { .. } => SuggestionMethod::PrototypeCaption,
            Self::GroupCap { .. } => SuggestionMethod::Groupcap,
            Self::Human => SuggestionMethod::Human,
            Self::Identity => SuggestionMethod::Identity,
        }
    }

    pub fn needs_backend(&self) -> bool {
        matches!(self, Self::PrototypeCaption { .. } | Self::GroupCap { .. })
    }
}

/// A configured method bound to a store and (for generated methods) a client.
#[derive(Debug, Clone)]
pub struct Suggester<'a> {
    pub label: String,
    pub method: Method,
    store: &'a EmbeddingStore,
    client: Option<&'a Client>,
}

/// A cluster whose suggestion could not be produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionFailure {
    pub query_id: String,
    pub cluster_id: String,
    pub method_label: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuggestionOutcome {
    pub records: Vec<SuggestionRecord>,
    pub failures: Vec<SuggestionFailure>,
}

impl<'a> Suggester<'a> {
    pub fn new(
        label: impl Into<String>,
        method: Method,
        store: &'a EmbeddingStore,
        client: Option<&'a Client>,
    ) -> Result<Self, SuggestError> {
        let label = label.into();
        if method.needs_backend() && client.is_none() {
            return Err(SuggestError::NoBackend(label));
        }
        Ok(Self {
            label,
            method,
            store,
            client,
        })
    }

    fn record(&self, query_id: &str, cluster: &Cluster, q_hat: String) -> SuggestionRecord {
        SuggestionRecord {
            query_id: query_id.to_string(),
            cluster_id: cluster.id.clone(),
            method: self.method.kind(),
            method_label: self.label.clone(),
            prototype_kind: None,
            query_aware: false,
            q_hat,
            prompt: None,
            backend_name: self
                .client
                .map_or_else(|| "none".to_string(), |c| c.name().to_string()),
            seed: self.client.map_or(0, |c| c.sampling().seed),
            prototype_member: None,
            selected_ids: Vec::new(),
            captions: Vec::new(),
        }
    }

    pub fn suggest(
        &self,
        query_id: &str,
        q0: &str,
        cluster: &Cluster,
    ) -> Result<SuggestionRecord, SuggestError> {
        match &self.method {
            Method::Identity => Ok(self.record(query_id, cluster, q0.to_string())),
            Method::Human => {
                let q_hat = cluster
                    .human_suggestion
                    .as_deref()
                    .map(clean_suggestion)
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| SuggestError::MissingHumanSuggestion(cluster.id.clone()))?;
                Ok(self.record(query_id, cluster, q_hat))
            }
            Method::PrototypeCaption { kind, query_aware } => {
                self.prototype_caption(query_id, q0, cluster, *kind, *query_aware)
            }
            Method::GroupCap {
                images,
                template,
                max_tokens,
            } => self.groupcap(query_id, q0, cluster, *images, template, *max_tokens),
        }
    }

    fn client(&self) -> Result<&Client, SuggestError> {
        self.client
            .ok_or_else(|| SuggestError::NoBackend(self.label.clone()))
    }

    fn prototype_caption(
        &self,
        query_id: &str,
        q0: &str,
        cluster: &Cluster,
        kind: PrototypeKind,
        query_aware: bool,
    ) -> Result<SuggestionRecord, SuggestError> {
        let client = self.client()?;
        let proto =
            prototype(cluster, self.store, kind).map_err(|source| SuggestError::Prototype {
                stage: Stage::Prototype,
                source,
            })?;
        let raw = client
            .caption_vector(&proto.vector, query_aware.then_some(q0))
            .map_err(|source| SuggestError::Backend {
                stage: Stage::Caption,
                source,
            })?;
        let q_hat = clean_suggestion(&raw);
        if q_hat.is_empty() {
            return Err(SuggestError::EmptySuggestion(Stage::Caption));
        }
        let mut rec = self.record(query_id, cluster, q_hat);
        rec.prototype_kind = Some(kind);
        rec.query_aware = query_aware;
        rec.prototype_member = proto.member_id;
        Ok(rec)
    }

    fn groupcap(
        &self,
        query_id: &str,
        q0: &str,
        cluster: &Cluster,
        images: usize,
        template: &PromptTemplate,
        max_tokens: usize,
    ) -> Result<SuggestionRecord, SuggestError> {
        let client = self.client()?;
        let selected =
            top_m_representatives(cluster, self.store, images.max(1)).map_err(|source| {
                SuggestError::Prototype {
                    stage: Stage::Select,
                    source,
                }
            })?;
        let mut captions = Vec::with_capacity(selected.len());
        for id in &selected {
            let v = crate::embedding::EmbeddingVector::new(
                self.store
                    .get(id)
                    .expect("selected ids are store members")
                    .to_vec(),
            )
            .expect("stored vectors are valid");
            let c = client
                .caption_vector(&v, None)
                .map_err(|source| SuggestError::Backend {
                    stage: Stage::Caption,
                    source,
                })?;
            captions.push(clean_suggestion(&c));
        }
        let prompt = template.render(q0, &captions);
        let raw = client
            .complete(&prompt, max_tokens)
            .map_err(|source| SuggestError::Backend {
                stage: Stage::Complete,
                source,
            })?;
        let q_hat = clean_suggestion(&raw);
        if q_hat.is_empty() {
            return Err(SuggestError::EmptySuggestion(Stage::Complete));
        }
        let mut rec = self.record(query_id, cluster, q_hat);
        rec.prompt = Some(prompt);
        rec.selected_ids = selected;
        rec.captions = captions;
        Ok(rec)
    }

    /// One record per cluster, sorted by cluster id. Clusters are processed
    /// in parallel; a failing cluster becomes a [`SuggestionFailure`] and
    /// does not affect the others.
    pub fn suggest_all(
        &self,
        query_id: &str,
        q0: &str,
        partition: &ClusterPartition,
    ) -> SuggestionOutcome {
        let jobs: Vec<(&str, &str, &Cluster)> = partition
            .clusters
            .iter()
            .map(|c| (query_id, q0, c))
            .collect();
        self.run(jobs)
    }

    /// [`Self::suggest_all`] over every entry of a benchmark, sorted by
    /// query id then cluster id.
    pub fn suggest_benchmark(&self, bench: &Benchmark) -> SuggestionOutcome {
        let partitions: Vec<_> = bench.queries.iter().map(|e| (e, e.partition())).collect();
        let jobs: Vec<(&str, &str, &Cluster)> = partitions
            .iter()
            .flat_map(|(e, p)| {
                p.clusters
                    .iter()
                    .map(move |c| (e.id.as_str(), e.text.as_str(), c))
            })
            .collect();
        self.run(jobs)
    }

    fn run(&self, jobs: Vec<(&str, &str, &Cluster)>) -> SuggestionOutcome {
        let results: Vec<_> = jobs
            .par_iter()
            .map(|(qid, q0, c)| (*qid, c.id.as_str(), self.suggest(qid, q0, c)))
            .collect();
        let mut out = SuggestionOutcome::default();
        for (qid, cid, r) in results {
            match r {
                Ok(rec) => out.records.push(rec),
                Err(e) => {
                    tracing::warn!(query = qid, cluster = cid, error = %e, "suggestion failed");
                    out.failures.push(SuggestionFailure {
                        query_id: qid.to_string(),
                        cluster_id: cid.to_string(),
                        method_label: self.label.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        out.records
            .sort_by(|a, b| (&a.query_id, &a.cluster_id).cmp(&(&b.query_id, &b.cluster_id)));
        out.failures
            .sort_by(|a, b| (&a.query_id, &a.cluster_id).cmp(&(&b.query_id, &b.cluster_id)));
        out
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[SuggestionRecord]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_records(path: impl AsRef<Path>) -> std::io::Result<Vec<SuggestionRecord>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: {e}", i + 1),
            )
        })?;
        out.push(rec);
    }
    Ok(out)
}
