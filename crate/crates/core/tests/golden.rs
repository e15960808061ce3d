use croqs_core::eval::{emit_report, ReportFormat};
use croqs_core::metrics::{macro_average, ClusterScore, MetricValues};
use croqs_core::PromptTemplate;

fn score(q: &str, c: &str, v: [f64; 6]) -> ClusterScore {
    ClusterScore {
        query_id: q.into(),
        cluster_id: c.into(),
        values: MetricValues::from_array(v),
    }
}

#[test]
fn default_prompt_matches_fixture() {
    let prompt =
        PromptTemplate::default().render("a sport race", &["a skier".into(), "snowy slope".into()]);
    assert_eq!(prompt, include_str!("fixtures/groupcap_prompt.txt"));
}

#[test]
fn markdown_report_matches_fixture() {
    let groupcap = macro_average(
        "groupcap",
        vec![
            score("qa", "a1", [0.76, 0.53, 0.82, 0.35, 1.0, 0.30]),
            score("qb", "b1", [0.66, 0.27, 0.42, 0.35, 0.8, 0.26]),
        ],
    )
    .unwrap();
    let identity = macro_average(
        "identity",
        vec![
            score("qb", "b2", [1.0, 1.0, 0.0, 0.08, 0.0, 0.05]),
            score("qa", "a1", [1.0, 1.0, 0.5, 0.15, 1.0, 0.06]),
            score("qb", "b1", [1.0, 1.0, 0.0, 0.02, 0.0, 0.03]),
        ],
    )
    .unwrap();
    let md = emit_report(&[groupcap, identity], ReportFormat::Markdown);
    assert_eq!(md, include_str!("fixtures/report.md"));
}
