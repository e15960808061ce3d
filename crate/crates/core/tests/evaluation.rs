use std::sync::Arc;

use croqs_core::eval::EvalError;
use croqs_core::synthetic::{planted, SyntheticConfig};
use croqs_core::{evaluate_suggestions, Capability, Client, EvalConfig, Method, Suggester};

fn setup() -> (croqs_core::synthetic::Synthetic, Client) {
    let s = planted(&SyntheticConfig::default());
    let client = Client::connect(Arc::new(s.mock.clone()), &[Capability::EmbedText]).unwrap();
    (s, client)
}

#[test]
fn identity_and_human_rows() {
    let (s, client) = setup();
    let identity = Suggester::new("identity", Method::Identity, &s.store, None)
        .unwrap()
        .suggest_benchmark(&s.benchmark);
    let human = Suggester::new("human", Method::Human, &s.store, None)
        .unwrap()
        .suggest_benchmark(&s.benchmark);
    assert!(identity.failures.is_empty() && human.failures.is_empty());
    let mut all = identity.records;
    all.extend(human.records);
    let ev = evaluate_suggestions(
        &s.benchmark,
        &s.store,
        &all,
        &client,
        &EvalConfig::default(),
    )
    .unwrap();
    assert_eq!(ev.reports.len(), 2);
    assert!(ev.forced_inclusions.is_empty());
    let (h, i) = (&ev.reports[0], &ev.reports[1]);
    assert_eq!(
        (h.method.as_str(), i.method.as_str()),
        ("human", "identity")
    );
    assert!((i.macro_mean.query_embedding_sim - 1.0).abs() < 1e-12);
    assert_eq!(i.macro_mean.jaccard, 1.0);
    assert!(i.macro_std.query_embedding_sim < 1e-12);
    assert!(h.macro_mean.jaccard <= i.macro_mean.jaccard);
    // human suggestions here are the planted oracle strings
    assert_eq!(h.macro_mean.recall_cluster, 1.0);
}

#[test]
fn small_result_sets_force_include_members() {
    let (s, client) = setup();
    let recs = s.oracle.clone();
    let cfg = EvalConfig {
        n: 20,
        ..EvalConfig::default()
    };
    let ev = evaluate_suggestions(&s.benchmark, &s.store, &recs, &client, &cfg).unwrap();
    // 30 cluster members per query, only 20 fit
    assert_eq!(ev.forced_inclusions.len(), 5 * 10);
    assert_eq!(ev.reports[0].macro_mean.recall_cluster, 1.0);
}

#[test]
fn coverage_is_checked() {
    let (s, client) = setup();
    let mut recs = s.oracle.clone();
    let dup = recs[0].clone();
    recs.pop();
    let err = evaluate_suggestions(
        &s.benchmark,
        &s.store,
        &recs,
        &client,
        &EvalConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, EvalError::MissingSuggestion { .. }), "{err}");
    recs.push(dup);
    let err = evaluate_suggestions(
        &s.benchmark,
        &s.store,
        &recs,
        &client,
        &EvalConfig::default(),
    )
    .unwrap_err();
    assert!(
        matches!(err, EvalError::DuplicateSuggestion { .. }),
        "{err}"
    );
}

#[test]
fn prototype_and_groupcap_recover_planted_concepts() {
    let s = planted(&SyntheticConfig::default());
    let client = Client::connect(Arc::new(s.mock.clone()), &[]).unwrap();
    let e = &s.benchmark.queries[0];
    let proto = Method::PrototypeCaption {
        kind: croqs_core::PrototypeKind::Centroid,
        query_aware: false,
    };
    let out = Suggester::new("clipcap", proto, &s.store, Some(&client))
        .unwrap()
        .suggest_all(&e.id, &e.text, &e.partition());
    let got: Vec<&str> = out.records.iter().map(|r| r.q_hat.as_str()).collect();
    assert_eq!(got, ["a running dog", "a snowy dog", "a wooden dog"]);

    let out = Suggester::new("groupcap", Method::groupcap(), &s.store, Some(&client))
        .unwrap()
        .suggest_all(&e.id, &e.text, &e.partition());
    let got: Vec<&str> = out.records.iter().map(|r| r.q_hat.as_str()).collect();
    assert_eq!(
        got,
        [
            "a photo of a running dog",
            "a photo of a snowy dog",
            "a photo of a wooden dog"
        ]
    );
}
