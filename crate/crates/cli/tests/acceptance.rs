//! One pass/fail line per acceptance criterion. Runs without a harness so the
//! lines are printed even when cargo captures test output.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use croqs_core::eval::{evaluate_suggestions, table_cells, EvalConfig};
use croqs_core::metrics::{average_precision, ndcg, recall_cluster, MetricReport};
use croqs_core::orchestrator::{Method, Suggester};
use croqs_core::prototype::{centroid_prototype, representative_ranking};
use croqs_core::synthetic::{
    planted, random_recall_expectation, random_suggestions, SyntheticConfig,
};
use croqs_core::{Benchmark, Client, Cluster, EmbeddingStore, RankedResultSet};

const ORACLE_TOLERANCE: f64 = 1e-12;
const ORACLE_MAX_ITEMS: usize = 7;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const IDENTITY_TOLERANCE: f64 = 1e-9;
const SYNTHETIC_MIN_RECALL: f64 = 0.99;
const RANDOM_TOLERANCE: f64 = 0.1;
const RANDOM_SEEDS: u64 = 20;
const SYNTHETIC_BUDGET: Duration = Duration::from_secs(30);
const PROTOTYPE_TOLERANCE: f64 = 1e-9;
const PROTOTYPE_CLUSTERS: usize = 100;
const RELEASE_QUERIES: usize = 50;
const RELEASE_CLUSTERS: usize = 295;
const RELEASE_MEAN: f64 = 5.9;
const RELEASE_MEAN_TOLERANCE: f64 = 0.05;
const RELEASE_ENV: &str = "CROQS_RELEASE_PATH";

type Criterion = (&'static str, fn() -> Outcome);

enum Outcome {
    Pass(String),
    Fail(String),
    /// The criterion's input is not available in this environment.
    NotRun(String),
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// Metric oracles ------------------------------------------------------------

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    heap_permute(n, &mut items, &mut out);
    out
}

fn heap_permute(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if k <= 1 {
        out.push(items.clone());
        return;
    }
    for i in 0..k {
        heap_permute(k - 1, items, out);
        let j = if k.is_multiple_of(2) { i } else { 0 };
        items.swap(j, k - 1);
    }
}

/// Precision at every relevant position, averaged over min(|rel|, cutoff).
fn brute_ap(ranking: &[usize], rel: u32, cutoff: usize) -> f64 {
    let is_rel = |x: usize| rel & (1 << x) != 0;
    let top = &ranking[..cutoff.min(ranking.len())];
    let mut sum = 0.0;
    for p in 0..top.len() {
        if is_rel(top[p]) {
            let hits = top[..=p].iter().filter(|&&x| is_rel(x)).count();
            sum += hits as f64 / (p + 1) as f64;
        }
    }
    sum / (rel.count_ones() as usize).min(cutoff) as f64
}

fn dcg(ranking: &[usize], rel: u32, rank: usize) -> f64 {
    ranking
        .iter()
        .take(rank)
        .enumerate()
        .filter(|(_, &x)| rel & (1 << x) != 0)
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum()
}

/// Ideal DCG found by maximizing over every ranking of the `n` items plus
/// the unranked one, so relevant items outside the ranking count.
fn ideal_dcg(rel: u32, rank: usize, n: usize) -> f64 {
    permutations(n + 1)
        .iter()
        .map(|r| dcg(r, rel, rank))
        .fold(0.0, f64::max)
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let names: Vec<String> = (0..ORACLE_MAX_ITEMS).map(|i| format!("i{i}")).collect();
    let mut cases = 0usize;
    let mut worst: f64 = 0.0;
    for n in 1..=ORACLE_MAX_ITEMS {
        let all = permutations(n);
        let rankings: Vec<RankedResultSet> = all
            .iter()
            .map(|r| RankedResultSet::from_ranked_ids(r.iter().map(|&x| names[x].clone())))
            .collect();
        // Relabeling makes "the first k items" every relevant set of size k.
        // Bit `n` is an item that is relevant but never ranked.
        for k in 1..=n {
            for absent in [false, true] {
                let rel = ((1u32 << k) - 1) | if absent { 1 << n } else { 0 };
                let relevant: Vec<String> = (0..=n)
                    .filter(|x| rel & (1 << x) != 0)
                    .map(|x| format!("i{x}"))
                    .collect();
                // Full depth plus a truncating cutoff.
                let cutoffs = [n, n.div_ceil(2)];
                let ideals = cutoffs.map(|c| ideal_dcg(rel, c, n));
                for (ranking, ranked) in all.iter().zip(&rankings) {
                    for (&cutoff, ideal) in cutoffs.iter().zip(ideals) {
                        let ap = average_precision(&relevant, ranked, cutoff).unwrap();
                        let nd = ndcg(&relevant, ranked, cutoff).unwrap();
                        worst = worst.max((ap - brute_ap(ranking, rel, cutoff)).abs());
                        worst = worst.max((nd - dcg(ranking, rel, cutoff) / ideal).abs());
                        cases += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= ORACLE_TOLERANCE && elapsed < ORACLE_BUDGET,
        format!(
            "{cases} cases, max error {worst:.1e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// Recall within the result set ------------------------------------------------

fn recall_cluster_semantics() -> Outcome {
    let ids: Vec<String> = (1..=10).map(|p| format!("img{p:02}")).collect();
    let ranking = RankedResultSet::from_ranked_ids(ids.clone());
    let cluster: Vec<&str> = [1, 2, 3, 5].iter().map(|&p| ids[p - 1].as_str()).collect();
    let partial = recall_cluster(&cluster, &ranking).unwrap();
    let perfect_cluster: Vec<&str> = ids[..4].iter().map(String::as_str).collect();
    let perfect = recall_cluster(&perfect_cluster, &ranking).unwrap();
    check(
        partial == 0.75 && perfect == 1.0,
        format!("positions {{1,2,3,5}} -> {partial}, separated -> {perfect}"),
    )
}

// Identity method ---------------------------------------------------------------

fn report<'a>(reports: &'a [MetricReport], label: &str) -> &'a MetricReport {
    reports
        .iter()
        .find(|r| r.method == label)
        .expect("report for label")
}

fn identity_similarity() -> Outcome {
    let s = planted(&SyntheticConfig::default());
    let client = Client::connect(std::sync::Arc::new(s.mock.clone()), &[]).unwrap();
    let records = Suggester::new("identity", Method::Identity, &s.store, None)
        .unwrap()
        .suggest_benchmark(&s.benchmark)
        .records;
    let eval = evaluate_suggestions(
        &s.benchmark,
        &s.store,
        &records,
        &client,
        &EvalConfig::default(),
    )
    .unwrap();
    let r = report(&eval.reports, "identity");
    let (sim, sim_sd) = (
        r.macro_mean.query_embedding_sim,
        r.macro_std.query_embedding_sim,
    );
    let (jac, jac_sd) = (r.macro_mean.jaccard, r.macro_std.jaccard);
    let ok = (sim - 1.0).abs() <= IDENTITY_TOLERANCE
        && sim_sd <= IDENTITY_TOLERANCE
        && (jac - 1.0).abs() <= IDENTITY_TOLERANCE
        && jac_sd <= IDENTITY_TOLERANCE;
    let cells = table_cells(r);
    check(ok, format!("CLIP {}, Jaccard {}", cells[0], cells[1]))
}

// Synthetic end to end ----------------------------------------------------------

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let config = SyntheticConfig::default();
    let s = planted(&config);
    let client = Client::connect(std::sync::Arc::new(s.mock.clone()), &[]).unwrap();
    let eval_config = EvalConfig {
        n: config.result_set_size(),
        ..EvalConfig::default()
    };
    let mut records = s.oracle.clone();
    for seed in 0..RANDOM_SEEDS {
        for mut r in random_suggestions(&s.benchmark, seed) {
            r.method_label = format!("random{seed:02}");
            records.push(r);
        }
    }
    let eval =
        evaluate_suggestions(&s.benchmark, &s.store, &records, &client, &eval_config).unwrap();
    let oracle = report(&eval.reports, "oracle");
    let expected = random_recall_expectation(&s.benchmark, eval_config.n);
    let random: Vec<f64> = (0..RANDOM_SEEDS)
        .map(|seed| {
            report(&eval.reports, &format!("random{seed:02}"))
                .macro_mean
                .recall_cluster
        })
        .collect();
    let random_mean = random.iter().sum::<f64>() / random.len() as f64;
    let elapsed = start.elapsed();
    let ok = oracle.macro_mean.recall_cluster >= SYNTHETIC_MIN_RECALL
        && oracle.macro_mean.repr_recall >= SYNTHETIC_MIN_RECALL
        && (random_mean - expected).abs() <= RANDOM_TOLERANCE
        && eval.forced_inclusions.is_empty()
        && elapsed < SYNTHETIC_BUDGET;
    check(
        ok,
        format!(
            "oracle recall_cluster {:.3} repr_recall {:.3}; random {:.3} vs expected {:.3}; {:.2}s",
            oracle.macro_mean.recall_cluster,
            oracle.macro_mean.repr_recall,
            random_mean,
            expected,
            elapsed.as_secs_f64()
        ),
    )
}

// Prototypes --------------------------------------------------------------------

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

fn prototype_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut order_mismatches = 0;
    for c in 0..PROTOTYPE_CLUSTERS {
        let n = rng.random_range(1..=20);
        let d = rng.random_range(2..=32);
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ids: Vec<String> = (0..n).map(|i| format!("p{c}-{i:02}")).collect();
        let store =
            EmbeddingStore::from_entries(ids.iter().cloned().zip(raw.iter().cloned()), None)
                .unwrap();
        let cluster = Cluster::new("c", ids.clone());

        let units: Vec<Vec<f64>> = raw.iter().map(|v| unit(v)).collect();
        let mut mean = vec![0.0; d];
        for v in &units {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / n as f64;
            }
        }
        let expected_centroid = unit(&mean);
        let got = centroid_prototype(&cluster, &store).unwrap();
        for (a, b) in got.vector.as_slice().iter().zip(&expected_centroid) {
            worst = worst.max((a - b).abs());
        }

        let mut expected: Vec<(String, f64)> = (0..n)
            .map(|i| {
                let s: f64 = (0..n)
                    .map(|j| if i == j { 1.0 } else { cos(&raw[i], &raw[j]) })
                    .sum();
                (ids[i].clone(), s / n as f64)
            })
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let ranking = representative_ranking(&cluster, &store).unwrap();
        for ((gid, gs), (eid, es)) in ranking.iter().zip(&expected) {
            worst = worst.max((gs - es).abs());
            if gid != eid && (gs - es).abs() > PROTOTYPE_TOLERANCE {
                order_mismatches += 1;
            }
        }
    }
    check(
        worst <= PROTOTYPE_TOLERANCE && order_mismatches == 0,
        format!("{PROTOTYPE_CLUSTERS} clusters, max error {worst:.1e}, {order_mismatches} ordering mismatches"),
    )
}

// Determinism -------------------------------------------------------------------

fn croqs(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_croqs"))
        .args(args)
        .env_remove("CROQS_BACKEND_URL")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "croqs {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let mock = format!("mock:{}", p("mock.json"));
    let (bench, store) = (p("benchmark.json"), p("store.bin"));
    croqs(&[
        "synth",
        "--out",
        &p(""),
        "--seed",
        "3",
        "--random-seed",
        "5",
    ])?;
    let methods: [(&str, &[&str]); 3] = [
        ("groupcap", &[]),
        ("clipcap", &["--query-aware"]),
        ("decap", &["--prototype", "representative"]),
    ];
    for (method, extra) in methods {
        let out = p(&format!("{method}.jsonl"));
        let mut args = vec![
            "suggest",
            "--dataset",
            &bench,
            "--embeddings",
            &store,
            "--backend",
            &mock,
            "--method",
            method,
            "--seed",
            "42",
            "--out",
            &out,
        ];
        args.extend_from_slice(extra);
        croqs(&args)?;
    }
    croqs(&[
        "eval",
        "--dataset",
        &bench,
        "--embeddings",
        &store,
        "--backend",
        &mock,
        "--suggestions",
        &p("groupcap.jsonl"),
        &p("clipcap.jsonl"),
        &p("decap.jsonl"),
        &p("oracle.jsonl"),
        &p("random.jsonl"),
        "--out",
        &p("report.json"),
        "--table",
        &p("report.md"),
        "--transcript",
        &p("transcript.jsonl"),
    ])?;
    let mut files = Vec::new();
    for name in [
        "groupcap.jsonl",
        "clipcap.jsonl",
        "decap.jsonl",
        "report.json",
        "report.md",
        "transcript.jsonl",
    ] {
        files.push((
            name.to_string(),
            std::fs::read(dir.join(name)).map_err(|e| e.to_string())?,
        ));
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, rb) = match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(ra), Ok(rb)) => (ra, rb),
        (Err(e), _) | (_, Err(e)) => return Outcome::Fail(e),
    };
    let differing: Vec<&str> = ra
        .iter()
        .zip(&rb)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let bytes: usize = ra.iter().map(|(_, b)| b.len()).sum();
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} files, {bytes} bytes identical across runs", ra.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

// Release loader ----------------------------------------------------------------

fn release_path() -> Option<PathBuf> {
    if let Ok(p) = std::env::var(RELEASE_ENV) {
        return Some(PathBuf::from(p));
    }
    let default = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/croqs.json");
    default.exists().then_some(default)
}

fn release_loader() -> Outcome {
    let Some(path) = release_path() else {
        return Outcome::NotRun(format!(
            "release file not found; set {RELEASE_ENV} or place it at data/croqs.json"
        ));
    };
    let bench = match Benchmark::load_release(&path) {
        Ok(b) => b,
        Err(e) => return Outcome::Fail(format!("{}: {e}", path.display())),
    };
    let st = bench.stats();
    check(
        st.queries == RELEASE_QUERIES
            && st.clusters == RELEASE_CLUSTERS
            && (st.mean_clusters_per_query - RELEASE_MEAN).abs() <= RELEASE_MEAN_TOLERANCE,
        format!(
            "{} queries, {} clusters, {:.2} clusters/query",
            st.queries, st.clusters, st.mean_clusters_per_query
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters are harness conventions; honour
    // `--list` so tooling that enumerates tests keeps working.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 7] = [
        ("metric oracle equivalence", metric_oracle),
        ("recall within result set", recall_cluster_semantics),
        ("identity similarity", identity_similarity),
        ("synthetic end to end", synthetic_end_to_end),
        ("prototype correctness", prototype_correctness),
        ("cli determinism", determinism),
        ("release loader", release_loader),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Outcome::Pass(d) => println!("PASS  {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
            // Reported as a failure line; it cannot fail the run because
            // the input is absent, not because the code is wrong.
            Outcome::NotRun(d) => println!("FAIL  {name}: not run, {d}"),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
