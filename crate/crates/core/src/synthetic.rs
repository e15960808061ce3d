//! Planted benchmarks with a known answer.
//!
//! Query `j` owns `clusters_per_query` orthogonal cluster axes and one
//! distractor axis. Cluster points lie within a small cone around their axis;
//! distractors mix the distractor axis with noise in the free dimensions
//! (those not used by any axis). The initial query points at the sum of all
//! of its axes, so its top-`n` result set is exactly its own clusters plus
//! its distractors. The mock backend maps each oracle suggestion to its
//! cluster axis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::backend::MockBackend;
use crate::benchmark::{Benchmark, BenchmarkCluster, BenchmarkEntry, SCHEMA_VERSION};
use crate::embedding::{normalize_in_place, EmbeddingStore};
use crate::orchestrator::{SuggestionMethod, SuggestionRecord};

const SUBJECTS: [&str; 8] = [
    "dog", "kitchen", "race", "street", "beach", "train", "bird", "table",
];
const MODIFIERS: [&str; 8] = [
    "running", "snowy", "wooden", "crowded", "sunny", "red", "small", "night",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub queries: usize,
    pub clusters_per_query: usize,
    pub points_per_cluster: usize,
    pub distractors_per_query: usize,
    pub cone_degrees: f64,
    /// Weight of the distractor axis in each distractor vector.
    pub distractor_weight: f64,
    pub dimension: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            queries: 5,
            clusters_per_query: 3,
            points_per_cluster: 10,
            distractors_per_query: 70,
            cone_degrees: 5.0,
            distractor_weight: 0.5,
            dimension: 64,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Size of each query's natural result set.
    pub fn result_set_size(&self) -> usize {
        self.clusters_per_query * self.points_per_cluster + self.distractors_per_query
    }

    fn axes_used(&self) -> usize {
        self.queries * (self.clusters_per_query + 1)
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub config: SyntheticConfig,
    pub store: EmbeddingStore,
    pub benchmark: Benchmark,
    pub mock: MockBackend,
    /// The planted answer for every cluster, method label `oracle`.
    pub oracle: Vec<SuggestionRecord>,
}

pub fn subject(j: usize) -> String {
    let base = SUBJECTS[j % SUBJECTS.len()];
    match j / SUBJECTS.len() {
        0 => base.to_string(),
        r => format!("{base} {r}"),
    }
}

pub fn modifier(i: usize) -> String {
    let base = MODIFIERS[i % MODIFIERS.len()];
    match i / MODIFIERS.len() {
        0 => base.to_string(),
        r => format!("{base} {r}"),
    }
}

fn axis(d: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[k] = 1.0;
    v
}

/// Unit vector supported on `free` dimensions only.
fn free_noise(d: usize, free: std::ops::Range<usize>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; d];
        for x in &mut v[free.clone()] {
            *x = rng.sample(StandardNormal);
        }
        if normalize_in_place(&mut v) {
            return v;
        }
    }
}

fn record(query_id: &str, cluster_id: &str, label: &str, q_hat: String) -> SuggestionRecord {
    SuggestionRecord {
        query_id: query_id.to_string(),
        cluster_id: cluster_id.to_string(),
        method: SuggestionMethod::Human,
        method_label: label.to_string(),
        prototype_kind: None,
        query_aware: false,
        q_hat,
        prompt: None,
        backend_name: "none".to_string(),
        seed: 0,
        prototype_member: None,
        selected_ids: Vec::new(),
        captions: Vec::new(),
    }
}

/// Builds the planted store, benchmark, mock backend and oracle answers.
///
/// Panics if the dimension leaves fewer than two free dimensions or a count
/// is zero.
pub fn planted(config: &SyntheticConfig) -> Synthetic {
    assert!(config.queries > 0 && config.clusters_per_query > 0 && config.points_per_cluster > 0);
    let d = config.dimension;
    assert!(
        d >= config.axes_used() + 2,
        "dimension {d} too small for {} axes",
        config.axes_used()
    );
    let free = config.axes_used()..d;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let max_angle = config.cone_degrees.to_radians();
    let w = config.distractor_weight.clamp(0.0, 1.0);

    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    let mut queries = Vec::with_capacity(config.queries);
    let mut mock = MockBackend::new(d).with_name("synthetic");
    let mut oracle = Vec::new();

    for j in 0..config.queries {
        let base = j * (config.clusters_per_query + 1);
        let query_id = format!("q{j}");
        let subj = subject(j);
        let q0 = format!("a photo of a {subj}");
        let mut q0_vec = axis(d, base + config.clusters_per_query);
        let mut clusters = Vec::with_capacity(config.clusters_per_query);

        for i in 0..config.clusters_per_query {
            let c = axis(d, base + i);
            for (x, y) in q0_vec.iter_mut().zip(&c) {
                *x += y;
            }
            let cluster_id = format!("c{i}");
            let image_ids: Vec<String> = (0..config.points_per_cluster)
                .map(|k| {
                    let theta = rng.random_range(0.0..max_angle);
                    let u = free_noise(d, free.clone(), &mut rng);
                    let v: Vec<f64> = c
                        .iter()
                        .zip(&u)
                        .map(|(a, b)| theta.cos() * a + theta.sin() * b)
                        .collect();
                    let id = format!("{query_id}-{cluster_id}-{k:03}");
                    entries.push((id.clone(), v));
                    id
                })
                .collect();

            let concept = format!("{} {subj}", modifier(i));
            let suggestion = format!("a photo of a {concept}");
            mock = mock
                .with_concept(concept.clone(), c.clone())
                .with_phrase(format!("a {concept}"), c.clone())
                .with_phrase(suggestion.clone(), c.clone())
                .with_script(
                    format!("- a {concept}"),
                    format!("Suggestion: {suggestion}"),
                );
            oracle.push(record(&query_id, &cluster_id, "oracle", suggestion.clone()));
            clusters.push(BenchmarkCluster {
                id: cluster_id,
                human_suggestion: suggestion,
                image_ids,
            });
        }

        let b = base + config.clusters_per_query;
        for k in 0..config.distractors_per_query {
            let noise = free_noise(d, free.clone(), &mut rng);
            let mut v: Vec<f64> = noise.iter().map(|x| x * (1.0 - w * w).sqrt()).collect();
            v[b] += w;
            entries.push((format!("{query_id}-d-{k:03}"), v));
        }

        normalize_in_place(&mut q0_vec);
        mock = mock.with_phrase(q0.clone(), q0_vec);
        queries.push(BenchmarkEntry {
            id: query_id,
            text: q0,
            clusters,
        });
    }

    let store = EmbeddingStore::from_entries(entries, Some("synthetic".to_string()))
        .expect("planted vectors are valid");
    let benchmark = Benchmark {
        version: SCHEMA_VERSION,
        image_namespace: "synthetic".to_string(),
        queries,
    };
    Synthetic {
        config: config.clone(),
        store,
        benchmark,
        mock,
        oracle,
    }
}

/// One random lowercase string per cluster, method label `random`.
pub fn random_suggestions(bench: &Benchmark, seed: u64) -> Vec<SuggestionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for e in &bench.queries {
        for c in &e.clusters {
            let words: Vec<String> = (0..3)
                .map(|_| {
                    let len = rng.random_range(3..9);
                    (0..len)
                        .map(|_| rng.random_range(b'a'..=b'z') as char)
                        .collect()
                })
                .collect();
            out.push(record(&e.id, &c.id, "random", words.join(" ")));
        }
    }
    out
}

/// Mean over clusters of `|C| / |R|`: the expected cluster-specificity
/// recall of a uniformly random ranking of each result set.
pub fn random_recall_expectation(bench: &Benchmark, result_set_size: usize) -> f64 {
    let sizes: Vec<f64> = bench
        .queries
        .iter()
        .flat_map(|e| &e.clusters)
        .map(|c| c.image_ids.len() as f64 / result_set_size as f64)
        .collect();
    sizes.iter().sum::<f64>() / sizes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Backend, CaptionRequest, EmbedTextRequest, Sampling};
    use crate::retrieval::search;

    #[test]
    fn shape_and_validity() {
        let s = planted(&SyntheticConfig::default());
        assert_eq!(s.store.len(), 500);
        assert_eq!(s.benchmark.queries.len(), 5);
        s.benchmark.validate().unwrap();
        assert!(s.benchmark.validate_against_store(&s.store).is_empty());
        assert_eq!(s.oracle.len(), 15);
        assert!((random_recall_expectation(&s.benchmark, 100) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn initial_result_set_is_the_planted_query() {
        let cfg = SyntheticConfig::default();
        let s = planted(&cfg);
        for e in &s.benchmark.queries {
            let v = s
                .mock
                .embed_text(&EmbedTextRequest {
                    texts: vec![e.text.clone()],
                    sampling: Sampling::default(),
                })
                .unwrap()
                .vectors
                .remove(0);
            let r = search(&s.store, &v, cfg.result_set_size()).unwrap();
            let prefix = format!("{}-", e.id);
            assert!(r.ids().all(|id| id.starts_with(&prefix)));
        }
    }

    #[test]
    fn member_captions_name_their_cluster() {
        let s = planted(&SyntheticConfig::default());
        let c = &s.benchmark.queries[1].clusters[2];
        let v = s.store.get(&c.image_ids[0]).unwrap().to_vec();
        let text = s
            .mock
            .caption(&CaptionRequest {
                vector: v,
                initial_query: None,
                sampling: Sampling::default(),
            })
            .unwrap()
            .text;
        assert_eq!(text, "a wooden kitchen");
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = planted(&SyntheticConfig::default());
        let b = planted(&SyntheticConfig::default());
        assert_eq!(a.store.ids(), b.store.ids());
        assert_eq!(a.store.row(7), b.store.row(7));
        assert_eq!(
            random_suggestions(&a.benchmark, 3),
            random_suggestions(&b.benchmark, 3)
        );
        assert_ne!(
            random_suggestions(&a.benchmark, 3),
            random_suggestions(&a.benchmark, 4)
        );
    }
}
