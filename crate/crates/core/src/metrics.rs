//! Suggestion quality measures and their macro average.
//!
//! | measure | what it ranks | relevant set |
//! | ------- | ------------- | ------------ |
//! | cluster recall | the initial result set, re-ranked by the suggestion, top `|C|` | the cluster |
//! | representativeness recall / AP / NDCG | the whole collection | the cluster |
//! | Jaccard | token sets of `q0` and the suggestion | |
//! | query embedding similarity | cosine of the two text embeddings | |
//!
//! Relevance is binary throughout. AP and NDCG are normalized by the best
//! score reachable inside their cutoff, so a cluster larger than the cutoff
//! can still score 1.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::RankedResultSet;

pub const DEFAULT_REPR_CUTOFF: usize = 100;
pub const DEFAULT_MAP_CUTOFF: usize = 100;
pub const DEFAULT_NDCG_RANK: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("relevant set is empty")]
    EmptyRelevantSet,
    #[error("cutoff must be at least 1")]
    ZeroCutoff,
    #[error("cluster of {cluster} images is larger than the ranked universe of {universe}")]
    ClusterLargerThanUniverse { cluster: usize, universe: usize },
    #[error("no scores to aggregate")]
    NothingToAggregate,
}

fn relevant_set<S: AsRef<str>>(relevant: &[S]) -> Result<HashSet<&str>, MetricError> {
    let set: HashSet<&str> = relevant.iter().map(AsRef::as_ref).collect();
    if set.is_empty() {
        return Err(MetricError::EmptyRelevantSet);
    }
    Ok(set)
}

fn hits_in_top(ranking: &RankedResultSet, cutoff: usize) -> impl Iterator<Item = (usize, &str)> {
    ranking
        .ids()
        .take(cutoff)
        .enumerate()
        .map(|(i, id)| (i + 1, id))
}

/// Fraction of the cluster found in the first `|cluster|` positions of a
/// ranking over the initial result set.
pub fn recall_cluster<S: AsRef<str>>(
    cluster: &[S],
    ranking_within_resultset: &RankedResultSet,
) -> Result<f64, MetricError> {
    let rel = relevant_set(cluster)?;
    let k = rel.len();
    let universe = ranking_within_resultset.universe_size();
    if k > universe {
        return Err(MetricError::ClusterLargerThanUniverse {
            cluster: k,
            universe,
        });
    }
    let hits = hits_in_top(ranking_within_resultset, k)
        .filter(|(_, id)| rel.contains(id))
        .count();
    Ok(hits as f64 / k as f64)
}

/// Fraction of the cluster retrieved within the first `cutoff` results.
pub fn representativeness_recall<S: AsRef<str>>(
    cluster: &[S],
    ranking_over_collection: &RankedResultSet,
    cutoff: usize,
) -> Result<f64, MetricError> {
    if cutoff == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    let rel = relevant_set(cluster)?;
    let hits = hits_in_top(ranking_over_collection, cutoff)
        .filter(|(_, id)| rel.contains(id))
        .count();
    Ok(hits as f64 / rel.len() as f64)
}

/// Average precision over the first `cutoff` results.
pub fn average_precision<S: AsRef<str>>(
    relevant: &[S],
    ranking: &RankedResultSet,
    cutoff: usize,
) -> Result<f64, MetricError> {
    if cutoff == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    let rel = relevant_set(relevant)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, id) in hits_in_top(ranking, cutoff) {
        if rel.contains(id) {
            hits += 1;
            sum += hits as f64 / rank as f64;
        }
    }
    Ok(sum / rel.len().min(cutoff) as f64)
}

/// Binary-gain NDCG at `rank`, discount `1 / log2(p + 1)`.
pub fn ndcg<S: AsRef<str>>(
    relevant: &[S],
    ranking: &RankedResultSet,
    rank: usize,
) -> Result<f64, MetricError> {
    if rank == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    let rel = relevant_set(relevant)?;
    let dcg: f64 = hits_in_top(ranking, rank)
        .filter(|(_, id)| rel.contains(id))
        .map(|(p, _)| discount(p))
        .sum();
    let ideal: f64 = (1..=rel.len().min(rank)).map(discount).sum();
    Ok(dcg / ideal)
}

#[inline]
fn discount(position: usize) -> f64 {
    1.0 / ((position + 1) as f64).log2()
}

/// Lower-cased alphanumeric runs, as a set.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard index of the token sets; two empty sets count as identical.
pub fn jaccard_similarity(q0: &str, q_hat: &str) -> f64 {
    let a = tokenize(q0);
    let b = tokenize(q_hat);
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

pub use crate::embedding::cosine as query_embedding_similarity;

/// The six measures for one unit (a cluster, a query mean, or a macro value).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub query_embedding_sim: f64,
    pub jaccard: f64,
    pub recall_cluster: f64,
    pub repr_recall: f64,
    pub repr_ndcg10: f64,
    pub repr_map: f64,
}

impl MetricValues {
    pub const COLUMNS: [&'static str; 6] =
        ["CLIP", "Jaccard", "Recall Cluster", "Recall", "NDCG", "MAP"];

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.query_embedding_sim,
            self.jaccard,
            self.recall_cluster,
            self.repr_recall,
            self.repr_ndcg10,
            self.repr_map,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            query_embedding_sim: a[0],
            jaccard: a[1],
            recall_cluster: a[2],
            repr_recall: a[3],
            repr_ndcg10: a[4],
            repr_map: a[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub query_id: String,
    pub cluster_id: String,
    #[serde(flatten)]
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub clusters: usize,
    #[serde(flatten)]
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub per_cluster: Vec<ClusterScore>,
    pub per_query: Vec<QueryScore>,
    pub macro_mean: MetricValues,
    /// Population standard deviation of the per-query means.
    pub macro_std: MetricValues,
}

/// Mean over clusters within each query, then mean and population standard
/// deviation over queries. Output is ordered by query id, then cluster id.
pub fn macro_average(
    method: impl Into<String>,
    per_cluster: Vec<ClusterScore>,
) -> Result<MetricReport, MetricError> {
    if per_cluster.is_empty() {
        return Err(MetricError::NothingToAggregate);
    }
    let mut per_cluster = per_cluster;
    per_cluster.sort_by(|a, b| {
        a.query_id
            .cmp(&b.query_id)
            .then_with(|| a.cluster_id.cmp(&b.cluster_id))
    });

    let mut groups: BTreeMap<&str, Vec<[f64; 6]>> = BTreeMap::new();
    for s in &per_cluster {
        groups
            .entry(&s.query_id)
            .or_default()
            .push(s.values.as_array());
    }
    let per_query: Vec<QueryScore> = groups
        .iter()
        .map(|(q, rows)| QueryScore {
            query_id: q.to_string(),
            clusters: rows.len(),
            values: MetricValues::from_array(column_mean(rows)),
        })
        .collect();

    let query_rows: Vec<[f64; 6]> = per_query.iter().map(|q| q.values.as_array()).collect();
    let mean = column_mean(&query_rows);
    let mut std = [0.0; 6];
    for (j, s) in std.iter_mut().enumerate() {
        let var = query_rows
            .iter()
            .map(|r| (r[j] - mean[j]).powi(2))
            .sum::<f64>()
            / query_rows.len() as f64;
        *s = var.sqrt();
    }
    Ok(MetricReport {
        method: method.into(),
        per_cluster,
        per_query,
        macro_mean: MetricValues::from_array(mean),
        macro_std: MetricValues::from_array(std),
    })
}

fn column_mean(rows: &[[f64; 6]]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= rows.len() as f64);
    out
}
