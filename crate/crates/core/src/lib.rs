//! Cross-modal query suggestion: given a text query over an image collection
//! held as embedding vectors, retrieve results, split them into semantic
//! clusters, suggest one refined query per cluster, and score suggestions
//! against curated clusters.
//!
//! Model work (text and image embedding, captioning, LLM completion) sits
//! behind the [`backend`] protocol; [`backend::MockBackend`] makes every
//! stage runnable without models.

pub mod backend;
pub mod benchmark;
pub mod clustering;
pub mod embedding;
pub mod eval;
pub mod metrics;
pub mod orchestrator;
pub mod prototype;
pub mod retrieval;
pub mod synthetic;

pub use backend::{Backend, BackendError, BackendLocator, Capability, Client};
pub use benchmark::{Benchmark, BenchmarkCluster, BenchmarkEntry, BenchmarkError};
pub use clustering::{kmeans_partition, spherical_kmeans, Cluster, ClusterPartition};
pub use embedding::{EmbeddingStore, EmbeddingVector, StoreError, StoreFormat};
pub use eval::{emit_report, evaluate_suggestions, EvalConfig, Evaluation, ReportFormat};
pub use metrics::{MetricReport, MetricValues};
pub use orchestrator::{
    Method, PromptTemplate, Suggester, SuggestionMethod, SuggestionOutcome, SuggestionRecord,
};
pub use prototype::{Prototype, PrototypeKind};
pub use retrieval::{search, search_within, RankedResultSet, ScoredId};
