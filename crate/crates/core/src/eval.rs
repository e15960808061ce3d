//! Benchmark evaluation: score suggestion records against curated clusters
//! and render the macro-averaged table.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Client};
use crate::benchmark::{Benchmark, BenchmarkCluster, BenchmarkEntry};
use crate::embedding::{dot, EmbeddingStore, EmbeddingVector};
use crate::metrics::{
    average_precision, jaccard_similarity, macro_average, ndcg, recall_cluster,
    representativeness_recall, ClusterScore, MetricError, MetricReport, MetricValues,
    DEFAULT_MAP_CUTOFF, DEFAULT_NDCG_RANK, DEFAULT_REPR_CUTOFF,
};
use crate::orchestrator::SuggestionRecord;
use crate::retrieval::{search, search_within, RetrievalError};

/// Texts are sent to the embedder in batches of this size.
const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Size of the initial result set for cluster-specificity recall.
    pub n: usize,
    pub repr_cutoff: usize,
    pub map_cutoff: usize,
    pub ndcg_rank: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n: 100,
            repr_cutoff: DEFAULT_REPR_CUTOFF,
            map_cutoff: DEFAULT_MAP_CUTOFF,
            ndcg_rank: DEFAULT_NDCG_RANK,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("method `{method}` has no suggestion for query `{query}` cluster `{cluster}`")]
    MissingSuggestion {
        method: String,
        query: String,
        cluster: String,
    },
    #[error("method `{method}` has {count} suggestions for query `{query}` cluster `{cluster}`")]
    DuplicateSuggestion {
        method: String,
        query: String,
        cluster: String,
        count: usize,
    },
    #[error("method `{method}` has a suggestion for unknown query `{query}` cluster `{cluster}`")]
    UnknownCluster {
        method: String,
        query: String,
        cluster: String,
    },
    #[error("no suggestions to evaluate")]
    NoSuggestions,
    #[error("{count} benchmark image reference(s) missing from the store, first `{first}`")]
    MissingImages { count: usize, first: String },
    #[error("evaluation config: {0} must be positive")]
    BadConfig(&'static str),
    #[error("embedding suggestions: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("query `{query}` cluster `{cluster}`: {source}")]
    Metric {
        query: String,
        cluster: String,
        #[source]
        source: MetricError,
    },
}

/// A benchmark cluster member that was not in the top-`n` initial result
/// set and was appended to it so cluster-specificity recall is defined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedInclusion {
    pub query_id: String,
    pub cluster_id: String,
    pub image_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub config: EvalConfig,
    /// One report per method label, sorted by label.
    pub reports: Vec<MetricReport>,
    pub forced_inclusions: Vec<ForcedInclusion>,
}

/// Top-`n` of the collection for `q0`, then any missing cluster members in
/// benchmark order.
fn initial_result_set(
    entry: &BenchmarkEntry,
    store: &EmbeddingStore,
    q0: &[f64],
    n: usize,
) -> Result<(Vec<String>, Vec<ForcedInclusion>), RetrievalError> {
    let mut ids: Vec<String> = search(store, q0, n)?.ids().map(str::to_string).collect();
    let mut present: BTreeSet<String> = ids.iter().cloned().collect();
    let mut forced = Vec::new();
    for c in &entry.clusters {
        for id in &c.image_ids {
            if present.insert(id.clone()) {
                ids.push(id.clone());
                forced.push(ForcedInclusion {
                    query_id: entry.id.clone(),
                    cluster_id: c.id.clone(),
                    image_id: id.clone(),
                });
            }
        }
    }
    Ok((ids, forced))
}

fn embed_all(
    client: &Client,
    texts: BTreeSet<&str>,
) -> Result<HashMap<String, EmbeddingVector>, BackendError> {
    let texts: Vec<String> = texts.into_iter().map(str::to_string).collect();
    let batches: Vec<_> = texts
        .par_chunks(EMBED_BATCH)
        .map(|chunk| client.embed_text(chunk))
        .collect::<Result<_, _>>()?;
    Ok(texts
        .into_iter()
        .zip(batches.into_iter().flatten())
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn score_cluster(
    store: &EmbeddingStore,
    config: &EvalConfig,
    entry: &BenchmarkEntry,
    cluster: &BenchmarkCluster,
    universe: &[String],
    q0_vec: &[f64],
    q_hat: &str,
    q_hat_vec: &[f64],
) -> Result<ClusterScore, EvalError> {
    let metric = |source| EvalError::Metric {
        query: entry.id.clone(),
        cluster: cluster.id.clone(),
        source,
    };
    let members = &cluster.image_ids;
    let within = search_within(store, q_hat_vec, universe, members.len())?;
    let depth = config
        .repr_cutoff
        .max(config.map_cutoff)
        .max(config.ndcg_rank);
    let full = search(store, q_hat_vec, depth)?;
    let values = MetricValues {
        query_embedding_sim: dot(q0_vec, q_hat_vec).clamp(-1.0, 1.0),
        jaccard: jaccard_similarity(&entry.text, q_hat),
        recall_cluster: recall_cluster(members, &within).map_err(metric)?,
        repr_recall: representativeness_recall(members, &full, config.repr_cutoff)
            .map_err(metric)?,
        repr_ndcg10: ndcg(members, &full, config.ndcg_rank).map_err(metric)?,
        repr_map: average_precision(members, &full, config.map_cutoff).map_err(metric)?,
    };
    Ok(ClusterScore {
        query_id: entry.id.clone(),
        cluster_id: cluster.id.clone(),
        values,
    })
}

/// Scores every method label found in `suggestions`. Each label must cover
/// every benchmark cluster exactly once.
pub fn evaluate_suggestions(
    bench: &Benchmark,
    store: &EmbeddingStore,
    suggestions: &[SuggestionRecord],
    embedder: &Client,
    config: &EvalConfig,
) -> Result<Evaluation, EvalError> {
    for (value, name) in [
        (config.n, "n"),
        (config.repr_cutoff, "repr_cutoff"),
        (config.map_cutoff, "map_cutoff"),
        (config.ndcg_rank, "ndcg_rank"),
    ] {
        if value == 0 {
            return Err(EvalError::BadConfig(name));
        }
    }
    if suggestions.is_empty() {
        return Err(EvalError::NoSuggestions);
    }
    let missing = bench.validate_against_store(store);
    if let Some(first) = missing.first() {
        return Err(EvalError::MissingImages {
            count: missing.len(),
            first: first.clone(),
        });
    }

    let mut by_method: BTreeMap<&str, BTreeMap<(&str, &str), Vec<&SuggestionRecord>>> =
        BTreeMap::new();
    for r in suggestions {
        by_method
            .entry(&r.method_label)
            .or_default()
            .entry((&r.query_id, &r.cluster_id))
            .or_default()
            .push(r);
    }
    for (method, table) in &by_method {
        for ((q, c), rs) in table {
            if bench.entry(q).and_then(|e| e.cluster(c)).is_none() {
                return Err(EvalError::UnknownCluster {
                    method: method.to_string(),
                    query: q.to_string(),
                    cluster: c.to_string(),
                });
            }
            if rs.len() > 1 {
                return Err(EvalError::DuplicateSuggestion {
                    method: method.to_string(),
                    query: q.to_string(),
                    cluster: c.to_string(),
                    count: rs.len(),
                });
            }
        }
        for e in &bench.queries {
            for c in &e.clusters {
                if !table.contains_key(&(e.id.as_str(), c.id.as_str())) {
                    return Err(EvalError::MissingSuggestion {
                        method: method.to_string(),
                        query: e.id.clone(),
                        cluster: c.id.clone(),
                    });
                }
            }
        }
    }

    let texts: BTreeSet<&str> = bench
        .queries
        .iter()
        .map(|e| e.text.as_str())
        .chain(suggestions.iter().map(|r| r.q_hat.as_str()))
        .collect();
    let vectors = embed_all(embedder, texts)?;

    let initial: Vec<(Vec<String>, Vec<ForcedInclusion>)> = bench
        .queries
        .par_iter()
        .map(|e| initial_result_set(e, store, vectors[&e.text].as_slice(), config.n))
        .collect::<Result<_, _>>()?;
    let forced_inclusions: Vec<ForcedInclusion> = initial
        .iter()
        .flat_map(|(_, f)| f.iter().cloned())
        .collect();
    for f in &forced_inclusions {
        tracing::info!(
            query = %f.query_id,
            cluster = %f.cluster_id,
            image = %f.image_id,
            "cluster member outside the initial result set was force-included"
        );
    }

    let mut reports = Vec::with_capacity(by_method.len());
    for (method, table) in &by_method {
        let jobs: Vec<(usize, &BenchmarkCluster)> = bench
            .queries
            .iter()
            .enumerate()
            .flat_map(|(i, e)| e.clusters.iter().map(move |c| (i, c)))
            .collect();
        let scores = jobs
            .par_iter()
            .map(|&(i, c)| {
                let entry = &bench.queries[i];
                let rec = table[&(entry.id.as_str(), c.id.as_str())][0];
                score_cluster(
                    store,
                    config,
                    entry,
                    c,
                    &initial[i].0,
                    vectors[&entry.text].as_slice(),
                    &rec.q_hat,
                    vectors[&rec.q_hat].as_slice(),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let report = macro_average(*method, scores).map_err(|source| EvalError::Metric {
            query: String::new(),
            cluster: String::new(),
            source,
        })?;
        reports.push(report);
    }
    Ok(Evaluation {
        config: *config,
        reports,
        forced_inclusions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

impl ReportFormat {
    /// Guess from a file extension, defaulting to JSON.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::Csv,
            Some("md") | Some("markdown") => Self::Markdown,
            _ => Self::Json,
        }
    }
}

fn two_decimals(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

/// `mean ± std` cells for one report, in column order.
pub fn table_cells(report: &MetricReport) -> Vec<String> {
    report
        .macro_mean
        .as_array()
        .iter()
        .zip(report.macro_std.as_array())
        .map(|(m, s)| format!("{} ± {}", two_decimals(*m), two_decimals(s)))
        .collect()
}

/// One row per method. JSON carries the full reports; CSV and markdown carry
/// the `mean ± std` table with two decimals.
pub fn emit_report(reports: &[MetricReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(reports).expect("reports serialize") + "\n"
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["Method"];
            header.extend(MetricValues::COLUMNS);
            w.write_record(&header).expect("in-memory write");
            for r in reports {
                let mut row = vec![r.method.clone()];
                row.extend(table_cells(r));
                w.write_record(&row).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "| Method | {} |", MetricValues::COLUMNS.join(" | "));
            let _ = writeln!(out, "|{}", " --- |".repeat(MetricValues::COLUMNS.len() + 1));
            for r in reports {
                let _ = writeln!(out, "| {} | {} |", r.method, table_cells(r).join(" | "));
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ClusterScore, QueryScore};

    fn report(method: &str, mean: [f64; 6], std: [f64; 6]) -> MetricReport {
        MetricReport {
            method: method.into(),
            per_cluster: vec![ClusterScore {
                query_id: "q".into(),
                cluster_id: "c".into(),
                values: MetricValues::from_array(mean),
            }],
            per_query: vec![QueryScore {
                query_id: "q".into(),
                clusters: 1,
                values: MetricValues::from_array(mean),
            }],
            macro_mean: MetricValues::from_array(mean),
            macro_std: MetricValues::from_array(std),
        }
    }

    #[test]
    fn markdown_and_csv_shape() {
        let r = report(
            "identity",
            [1.0, 1.0, 0.234, 0.5, 0.126, 0.3],
            [0.0, 0.0, 0.1, 0.2, -0.0, 0.0],
        );
        let md = emit_report(std::slice::from_ref(&r), ReportFormat::Markdown);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[2],
            "| identity | 1.00 ± 0.00 | 1.00 ± 0.00 | 0.23 ± 0.10 | 0.50 ± 0.20 | 0.13 ± 0.00 | 0.30 ± 0.00 |"
        );
        let csv = emit_report(&[r], ReportFormat::Csv);
        let mut rd = csv::Reader::from_reader(csv.as_bytes());
        assert_eq!(rd.headers().unwrap().len(), 7);
        let rows: Vec<_> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(&rows[0][1], "1.00 ± 0.00");
    }

    #[test]
    fn json_round_trips() {
        let r = report("m", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6], [0.01; 6]);
        let text = emit_report(std::slice::from_ref(&r), ReportFormat::Json);
        let back: Vec<MetricReport> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn config_defaults() {
        let c: EvalConfig = serde_json::from_str("{\"n\": 50}").unwrap();
        assert_eq!(
            c,
            EvalConfig {
                n: 50,
                ..EvalConfig::default()
            }
        );
        assert_eq!(EvalConfig::default().ndcg_rank, 10);
    }
}
