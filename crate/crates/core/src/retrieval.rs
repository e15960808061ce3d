//! Exact top-k retrieval by descending cosine.
//!
//! Ties are broken by ascending image id so rankings are reproducible.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, EmbeddingStore};

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot search an empty collection")]
    EmptyStore,
    #[error("query has dimension {found}, store has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("subset references unknown image id `{0}`")]
    UnknownId(String),
    #[error("subset lists image id `{0}` more than once")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub image_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "ids")]
pub enum Universe {
    Collection,
    Subset(Vec<String>),
}

/// An ordered result list: scores non-increasing, ids unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResultSet {
    pub query_id: String,
    pub items: Vec<ScoredId>,
    pub universe: Universe,
}

impl RankedResultSet {
    /// Builds a ranking from ids already in rank order. Scores descend from
    /// `len` to 1, which keeps the ordering invariant without real scores.
    pub fn from_ranked_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let n = ids.len();
        let items = ids
            .into_iter()
            .enumerate()
            .map(|(i, image_id)| ScoredId {
                image_id,
                score: (n - i) as f64,
            })
            .collect();
        Self {
            query_id: String::new(),
            items,
            universe: Universe::Collection,
        }
    }

    pub fn with_query_id(mut self, id: impl Into<String>) -> Self {
        self.query_id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.items.iter().map(|s| s.image_id.as_str())
    }

    /// 1-based rank of `id`, if present.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.ids().position(|x| x == id).map(|p| p + 1)
    }

    /// Number of items in the search universe.
    pub fn universe_size(&self) -> usize {
        match &self.universe {
            Universe::Collection => self.items.len(),
            Universe::Subset(ids) => ids.len(),
        }
    }
}

#[derive(Debug)]
struct Candidate<'a> {
    score: f64,
    id: &'a str,
}

impl Ord for Candidate<'_> {
    // Greater means ranked earlier.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(self.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

fn select_top_k<'a>(candidates: impl Iterator<Item = Candidate<'a>>, k: usize) -> Vec<ScoredId> {
    let mut heap: BinaryHeap<Reverse<Candidate<'a>>> = BinaryHeap::with_capacity(k + 1);
    for c in candidates {
        if heap.len() < k {
            heap.push(Reverse(c));
        } else if let Some(Reverse(worst)) = heap.peek() {
            if c > *worst {
                heap.pop();
                heap.push(Reverse(c));
            }
        }
    }
    // ascending Reverse order is best-first
    heap.into_sorted_vec()
        .into_iter()
        .map(|Reverse(c)| ScoredId {
            image_id: c.id.to_string(),
            score: c.score,
        })
        .collect()
}

fn check_query(store: &EmbeddingStore, query: &[f64], k: usize) -> Result<(), RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if store.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    if query.len() != store.dimension() {
        return Err(RetrievalError::DimensionMismatch {
            expected: store.dimension(),
            found: query.len(),
        });
    }
    Ok(())
}

/// Top-`min(k, |store|)` images of the whole collection.
pub fn search(
    store: &EmbeddingStore,
    query: &[f64],
    k: usize,
) -> Result<RankedResultSet, RetrievalError> {
    check_query(store, query, k)?;
    let candidates = store.iter().map(|(id, v)| Candidate {
        score: dot(query, v),
        id,
    });
    Ok(RankedResultSet {
        query_id: String::new(),
        items: select_top_k(candidates, k),
        universe: Universe::Collection,
    })
}

/// Like [`search`], restricted to `subset`.
pub fn search_within(
    store: &EmbeddingStore,
    query: &[f64],
    subset: &[String],
    k: usize,
) -> Result<RankedResultSet, RetrievalError> {
    check_query(store, query, k)?;
    let mut seen = HashSet::with_capacity(subset.len());
    let mut rows = Vec::with_capacity(subset.len());
    for id in subset {
        let row = store
            .index_of(id)
            .ok_or_else(|| RetrievalError::UnknownId(id.clone()))?;
        if !seen.insert(id.as_str()) {
            return Err(RetrievalError::DuplicateId(id.clone()));
        }
        rows.push((id.as_str(), row));
    }
    let candidates = rows.into_iter().map(|(id, row)| Candidate {
        score: dot(query, store.row(row)),
        id,
    });
    Ok(RankedResultSet {
        query_id: String::new(),
        items: select_top_k(candidates, k),
        universe: Universe::Subset(subset.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingVector;
    use proptest::prelude::*;

    fn store(entries: &[(&str, &[f64])]) -> EmbeddingStore {
        EmbeddingStore::from_entries(
            entries.iter().map(|(id, v)| (id.to_string(), v.to_vec())),
            None,
        )
        .unwrap()
    }

    fn ids(r: &RankedResultSet) -> Vec<&str> {
        r.ids().collect()
    }

    /// Independent oracle: score everything, full sort.
    fn brute_force(
        store: &EmbeddingStore,
        q: &[f64],
        subset: Option<&[String]>,
        k: usize,
    ) -> Vec<String> {
        let mut all: Vec<(f64, String)> = store
            .iter()
            .filter(|(id, _)| subset.is_none_or(|s| s.iter().any(|x| x == id)))
            .map(|(id, v)| (q.iter().zip(v).map(|(a, b)| a * b).sum(), id.to_string()))
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, id)| id).collect()
    }

    #[test]
    fn self_retrieval_ranks_first() {
        let s = store(&[
            ("a", &[1.0, 0.0, 0.0]),
            ("b", &[0.0, 1.0, 0.0]),
            ("c", &[0.5, 0.5, 0.7]),
        ]);
        let r = search(&s, s.get("c").unwrap(), 3).unwrap();
        assert_eq!(r.items[0].image_id, "c");
        assert!((r.items[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_order() {
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let q = EmbeddingVector::new(vec![2.0, 1.0]).unwrap();
        let r = search(&s, q.as_slice(), 2).unwrap();
        assert_eq!(ids(&r), ["a", "b"]);
        assert!((r.items[0].score - 2.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((r.items[1].score - 1.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn k_larger_than_store_returns_everything() {
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let r = search(&s, &[1.0, 0.0], 10).unwrap();
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn ties_break_by_id() {
        let s = store(&[
            ("zeta", &[1.0, 0.0]),
            ("alpha", &[1.0, 0.0]),
            ("mid", &[1.0, 0.0]),
        ]);
        let r = search(&s, &[1.0, 0.0], 3).unwrap();
        assert_eq!(ids(&r), ["alpha", "mid", "zeta"]);
    }

    #[test]
    fn errors() {
        let s = store(&[("a", &[1.0, 0.0])]);
        assert_eq!(
            search(&s, &[1.0, 0.0], 0).unwrap_err(),
            RetrievalError::ZeroK
        );
        assert!(matches!(
            search(&s, &[1.0, 0.0, 0.0], 1),
            Err(RetrievalError::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
        assert_eq!(
            search_within(&s, &[1.0, 0.0], &["nope".to_string()], 1).unwrap_err(),
            RetrievalError::UnknownId("nope".into())
        );
        assert_eq!(
            search_within(&s, &[1.0, 0.0], &["a".to_string(), "a".to_string()], 1).unwrap_err(),
            RetrievalError::DuplicateId("a".into())
        );
    }

    #[test]
    fn subset_identity_and_singleton() {
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[0.6, 0.8]), ("c", &[0.0, 1.0])]);
        let q = [0.8, 0.6];
        let all = s.ids().to_vec();
        let full = search(&s, &q, 3).unwrap();
        let within = search_within(&s, &q, &all, 3).unwrap();
        assert_eq!(full.items, within.items);

        let single = search_within(&s, &q, &["c".to_string()], 5).unwrap();
        assert_eq!(ids(&single), ["c"]);
        assert_eq!(single.universe_size(), 1);
    }

    #[test]
    fn four_item_subset_matches_oracle() {
        let s = store(&[
            ("p", &[1.0, 0.0, 0.0]),
            ("q", &[0.0, 1.0, 0.0]),
            ("r", &[0.0, 0.0, 1.0]),
            ("s", &[1.0, 1.0, 0.0]),
            ("t", &[1.0, 1.0, 1.0]),
            ("u", &[-1.0, 0.0, 0.0]),
        ]);
        let q = EmbeddingVector::new(vec![3.0, 1.0, 2.0]).unwrap();
        let subset: Vec<String> = ["q", "r", "u", "t"].iter().map(|s| s.to_string()).collect();
        let r = search_within(&s, q.as_slice(), &subset, 4).unwrap();
        // cos to t = 6/sqrt(42) ≈ .926, r = 2/sqrt(14) ≈ .535, q ≈ .267, u ≈ -.802
        assert_eq!(ids(&r), ["t", "r", "q", "u"]);
        assert_eq!(ids(&r), brute_force(&s, q.as_slice(), Some(&subset), 4));
    }

    fn random_store(n: usize, d: usize, seed: u64) -> EmbeddingStore {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // coarse grid values so exact ties actually occur
        EmbeddingStore::from_entries(
            (0..n).map(|i| {
                let v: Vec<f64> = (0..d)
                    .map(|_| rng.random_range(-2..=2) as f64 + 0.5)
                    .collect();
                (format!("id{i:04}"), v)
            }),
            None,
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exact_against_brute_force(n in 1usize..1000, d in 1usize..64, k in 1usize..50, seed: u64) {
            let s = random_store(n, d, seed);
            let q = s.row(seed as usize % n).to_vec();
            let r = search(&s, &q, k).unwrap();
            let got: Vec<String> = r.ids().map(String::from).collect();
            prop_assert_eq!(got, brute_force(&s, &q, None, k));
            prop_assert!(r.items.windows(2).all(|w| w[0].score >= w[1].score));
        }

        #[test]
        fn monotone_prefix(n in 2usize..300, d in 1usize..16, k in 1usize..40, seed: u64) {
            let s = random_store(n, d, seed);
            let q = s.row(0).to_vec();
            let a = search(&s, &q, k).unwrap();
            let b = search(&s, &q, k + 1).unwrap();
            prop_assert_eq!(&b.items[..a.len()], &a.items[..]);
        }

        #[test]
        fn planted_duplicate_ranks_first(n in 1usize..300, d in 2usize..32, seed: u64) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = EmbeddingVector::new(q).unwrap();
            let mut entries: Vec<(String, Vec<f64>)> = (0..n)
                .map(|i| (format!("x{i}"), (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect();
            // "!" sorts before any alphanumeric id, so it also wins exact ties
            entries.push(("!planted".into(), q.as_slice().to_vec()));
            let s = EmbeddingStore::from_entries(entries, None).unwrap();
            let r = search(&s, q.as_slice(), 1).unwrap();
            prop_assert_eq!(r.items[0].image_id.as_str(), "!planted");
        }
    }
}
