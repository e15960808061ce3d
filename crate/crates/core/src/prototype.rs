//! Cluster prototypes: the re-normalized centroid, or the member with the
//! highest summed cosine to the rest of the cluster.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::Cluster;
use crate::embedding::{dot, EmbeddingStore, EmbeddingVector};

pub const DEFAULT_GROUPCAP_IMAGES: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum PrototypeError {
    #[error("cluster `{0}` is empty")]
    EmptyCluster(String),
    #[error("cluster `{cluster}` references unknown image `{image}`")]
    UnknownId { cluster: String, image: String },
    #[error("members of cluster `{0}` cancel out; centroid is undefined")]
    DegenerateCentroid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeKind {
    Centroid,
    Representative,
}

impl std::str::FromStr for PrototypeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centroid" => Ok(Self::Centroid),
            "representative" | "repr" => Ok(Self::Representative),
            other => Err(format!("unknown prototype kind `{other}`")),
        }
    }
}

impl std::fmt::Display for PrototypeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Centroid => "centroid",
            Self::Representative => "representative",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub vector: EmbeddingVector,
    pub kind: PrototypeKind,
    pub cluster_id: String,
    /// Set for representative prototypes.
    pub member_id: Option<String>,
}

fn member_vectors<'a>(
    cluster: &Cluster,
    store: &'a EmbeddingStore,
) -> Result<Vec<&'a [f64]>, PrototypeError> {
    if cluster.is_empty() {
        return Err(PrototypeError::EmptyCluster(cluster.id.clone()));
    }
    cluster
        .image_ids
        .iter()
        .map(|id| {
            store.get(id).ok_or_else(|| PrototypeError::UnknownId {
                cluster: cluster.id.clone(),
                image: id.clone(),
            })
        })
        .collect()
}

/// Arithmetic mean of the member embeddings, re-normalized.
pub fn centroid_prototype(
    cluster: &Cluster,
    store: &EmbeddingStore,
) -> Result<Prototype, PrototypeError> {
    let members = member_vectors(cluster, store)?;
    let mut mean = vec![0.0; store.dimension()];
    for v in &members {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    let n = members.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let vector = EmbeddingVector::new(mean)
        .map_err(|_| PrototypeError::DegenerateCentroid(cluster.id.clone()))?;
    Ok(Prototype {
        vector,
        kind: PrototypeKind::Centroid,
        cluster_id: cluster.id.clone(),
        member_id: None,
    })
}

/// Members ordered by mean cosine to every member of the cluster (self
/// included, counted as exactly 1), best first, ties by id.
pub fn representative_ranking(
    cluster: &Cluster,
    store: &EmbeddingStore,
) -> Result<Vec<(String, f64)>, PrototypeError> {
    let members = member_vectors(cluster, store)?;
    let n = members.len();
    let mut sums = vec![0.0; n];
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        gram[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let c = dot(members[i], members[j]);
            gram[i * n + j] = c;
            gram[j * n + i] = c;
        }
    }
    for (i, s) in sums.iter_mut().enumerate() {
        *s = gram[i * n..(i + 1) * n].iter().sum();
    }
    let mut ranked: Vec<(String, f64)> = cluster
        .image_ids
        .iter()
        .cloned()
        .zip(sums.into_iter().map(|s| s / n as f64))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

pub fn representative_prototype(
    cluster: &Cluster,
    store: &EmbeddingStore,
) -> Result<Prototype, PrototypeError> {
    let ranking = representative_ranking(cluster, store)?;
    let (id, _) = ranking.into_iter().next().expect("non-empty cluster");
    let vector = EmbeddingVector::new(store.get(&id).expect("checked member").to_vec())
        .expect("stored vectors are valid");
    Ok(Prototype {
        vector,
        kind: PrototypeKind::Representative,
        cluster_id: cluster.id.clone(),
        member_id: Some(id),
    })
}

pub fn prototype(
    cluster: &Cluster,
    store: &EmbeddingStore,
    kind: PrototypeKind,
) -> Result<Prototype, PrototypeError> {
    match kind {
        PrototypeKind::Centroid => centroid_prototype(cluster, store),
        PrototypeKind::Representative => representative_prototype(cluster, store),
    }
}

/// The first `min(m, |cluster|)` ids of [`representative_ranking`].
pub fn top_m_representatives(
    cluster: &Cluster,
    store: &EmbeddingStore,
    m: usize,
) -> Result<Vec<String>, PrototypeError> {
    Ok(representative_ranking(cluster, store)?
        .into_iter()
        .take(m)
        .map(|(id, _)| id)
        .collect())
}
