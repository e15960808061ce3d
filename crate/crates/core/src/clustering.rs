//! Partitioning a result set into semantic groups.
//!
//! Live exploration uses spherical k-means over the unit embeddings: points go
//! to the centroid with the highest cosine, centroids are re-normalized means.
//! Benchmark evaluation never calls this and uses the curated clusters instead.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, normalize_in_place, EmbeddingStore};
use crate::retrieval::RankedResultSet;

pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_CLUSTER_COUNT: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cluster count must be at least 2, got {0}")]
    TooFewClusters(usize),
    #[error("cannot form {m} clusters from {n} results")]
    TooManyClusters { m: usize, n: usize },
    #[error("result references image `{0}` that is not in the store")]
    UnknownId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub image_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_suggestion: Option<String>,
}

impl Cluster {
    pub fn new(id: impl Into<String>, image_ids: Vec<String>) -> Self {
        Self {
            id: id.into(),
            image_ids,
            human_suggestion: None,
        }
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSource {
    Benchmark,
    Computed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub clusters: Vec<Cluster>,
    pub source: PartitionSource,
}

impl ClusterPartition {
    /// True when no image appears in two clusters and no cluster is empty.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.clusters
            .iter()
            .all(|c| !c.is_empty() && c.image_ids.iter().all(|id| seen.insert(id.as_str())))
    }
}

/// Raw output of [`spherical_kmeans`].
#[derive(Debug, Clone)]
pub struct KMeansFit {
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Mean point-to-centroid cosine after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Spherical k-means with k-means++ seeding.
///
/// `points` must be unit vectors of equal dimension and `2 <= m <= points.len()`
/// (checked by the caller).
pub fn spherical_kmeans(
    points: &[&[f64]],
    m: usize,
    seed: u64,
    max_iterations: usize,
) -> KMeansFit {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, m, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut objective_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iterations {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = nearest(p, &centroids).0;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        repair_empty(points, &mut assignments, &mut centroids);
        update_centroids(points, &assignments, &mut centroids);
        objective_trace.push(objective(points, &assignments, &centroids));
        if !changed {
            converged = true;
            break;
        }
    }

    KMeansFit {
        assignments,
        centroids,
        objective_trace,
        iterations,
        converged,
    }
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let s = dot(p, centroid);
        if s > best.1 {
            best = (c, s);
        }
    }
    best
}

fn seed_plus_plus(points: &[&[f64]], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    // squared chord distance to the nearest chosen center: 2 - 2 cos
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| (2.0 - 2.0 * dot(p, &centroids[0])).max(0.0))
        .collect();
    dist[first] = 0.0;

    while centroids.len() < m {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // every remaining point coincides with a center
            Err(_) => (0..n).find(|&i| !chosen[i]).expect("m <= n"),
        };
        chosen[next] = true;
        centroids.push(points[next].to_vec());
        let c = centroids.last().unwrap();
        for (i, p) in points.iter().enumerate() {
            let d = if chosen[i] {
                0.0
            } else {
                (2.0 - 2.0 * dot(p, c)).max(0.0)
            };
            dist[i] = dist[i].min(d);
        }
    }
    centroids
}

/// Refills empty clusters with the point least similar to its own centroid,
/// taken from a cluster that can spare it.
fn repair_empty(points: &[&[f64]], assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    let m = centroids.len();
    loop {
        let mut sizes = vec![0usize; m];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .min_by(|&a, &b| {
                let sa = dot(points[a], &centroids[assignments[a]]);
                let sb = dot(points[b], &centroids[assignments[b]]);
                sa.total_cmp(&sb).then(a.cmp(&b))
            })
            .expect("n >= m leaves a cluster with a spare point");
        assignments[donor] = empty;
        centroids[empty] = points[donor].to_vec();
    }
}

fn update_centroids(points: &[&[f64]], assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; centroids.len()];
    for (p, &a) in points.iter().zip(assignments) {
        for (s, x) in sums[a].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for (c, mut s) in sums.into_iter().enumerate() {
        // a zero mean (antipodal members) keeps the previous direction
        if normalize_in_place(&mut s) {
            centroids[c] = s;
        }
    }
}

fn objective(points: &[&[f64]], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    let total: f64 = points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| dot(p, &centroids[a]))
        .sum();
    total / points.len() as f64
}

/// Clusters a ranked result set into `m` groups.
///
/// Clusters are numbered by the rank of their best-ranked member, and members
/// keep result-set order.
pub fn kmeans_partition(
    result: &RankedResultSet,
    store: &EmbeddingStore,
    m: usize,
    seed: u64,
) -> Result<ClusterPartition, ClusterError> {
    if m < 2 {
        return Err(ClusterError::TooFewClusters(m));
    }
    if m > result.len() {
        return Err(ClusterError::TooManyClusters { m, n: result.len() });
    }
    let points = result
        .ids()
        .map(|id| {
            store
                .get(id)
                .ok_or_else(|| ClusterError::UnknownId(id.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let fit = spherical_kmeans(&points, m, seed, DEFAULT_MAX_ITERATIONS);
    if !fit.converged {
        tracing::warn!(
            iterations = fit.iterations,
            "k-means stopped before converging"
        );
    }

    let mut groups: Vec<Vec<String>> = vec![Vec::new(); m];
    for (id, &a) in result.ids().zip(&fit.assignments) {
        groups[a].push(id.to_string());
    }
    // result order is preserved inside each group, so sorting by the first
    // member's rank orders groups by their best hit
    let rank: std::collections::HashMap<&str, usize> =
        result.ids().enumerate().map(|(i, id)| (id, i)).collect();
    groups.sort_by_key(|g| rank[g[0].as_str()]);

    let width = (m - 1).to_string().len().max(2);
    let clusters = groups
        .into_iter()
        .enumerate()
        .map(|(i, ids)| Cluster::new(format!("c{i:0width$}"), ids))
        .collect();
    Ok(ClusterPartition {
        clusters,
        source: PartitionSource::Computed,
    })
}
