use fbsdiag::eval::{
    gen_synthetic_line, run_ablation, AblationReport, EvalSuite, SuiteQuery, SynthParams,
};
use fbsdiag::{ChunkMethod, EmbedderConfig, EmbedderKind, Level};

const BOTH: [ChunkMethod; 2] = [ChunkMethod::Proposed, ChunkMethod::Baseline];

fn synthetic_report(drift: f64, seed: u64) -> AblationReport {
    let data = gen_synthetic_line(&SynthParams {
        drift,
        seed,
        ..Default::default()
    })
    .unwrap();
    let g = data.build_graph().unwrap();
    run_ablation(&g, &data.suite, &BOTH, &EmbedderConfig::local()).unwrap()
}

fn final_recalls(report: &AblationReport, method: ChunkMethod) -> Vec<f64> {
    report
        .results
        .iter()
        .filter(|r| r.method == method)
        .map(|r| r.last().recall)
        .collect()
}

#[test]
fn easy_regime_methods_agree() {
    let r = synthetic_report(0.0, 42);
    assert!(!r.is_partial());
    let p = r.mean_final_recall(ChunkMethod::Proposed).unwrap();
    let b = r.mean_final_recall(ChunkMethod::Baseline).unwrap();
    assert!((p - b).abs() <= 0.1, "proposed {p} baseline {b}");
}

#[test]
fn hard_regime_proposed_wins_most_queries() {
    let r = synthetic_report(1.0, 42);
    let p = final_recalls(&r, ChunkMethod::Proposed);
    let b = final_recalls(&r, ChunkMethod::Baseline);
    assert_eq!(p.len(), b.len());
    let wins = p.iter().zip(&b).filter(|(p, b)| p > b).count();
    assert!(wins * 5 >= p.len() * 4, "{wins}/{}", p.len());
}

#[test]
fn drift_degrades_baseline() {
    let easy = synthetic_report(0.0, 42)
        .mean_final_recall(ChunkMethod::Baseline)
        .unwrap();
    let hard = synthetic_report(1.0, 42)
        .mean_final_recall(ChunkMethod::Baseline)
        .unwrap();
    assert!(hard < easy, "drift 1: {hard}, drift 0: {easy}");
}

#[test]
fn two_method_tags_per_query_and_full_curves() {
    let data = gen_synthetic_line(&SynthParams {
        drift: 0.5,
        ..Default::default()
    })
    .unwrap();
    let g = data.build_graph().unwrap();
    let r = run_ablation(&g, &data.suite, &BOTH, &EmbedderConfig::local()).unwrap();
    for q in &data.suite.queries {
        let tags: Vec<ChunkMethod> = r
            .results
            .iter()
            .filter(|x| x.query_id == q.id)
            .map(|x| x.method)
            .collect();
        assert_eq!(tags, BOTH);
        for m in BOTH {
            let res = r.result(&q.id, m).unwrap();
            assert_eq!(
                res.curve.iter().map(|c| c.n).collect::<Vec<_>>(),
                (1..=q.items.len()).collect::<Vec<_>>()
            );
        }
    }
    let tsv = r.results_tsv();
    let rows = tsv.lines().count() - 1;
    let expected: usize = data.suite.queries.iter().map(|q| 2 * q.items.len()).sum();
    assert_eq!(rows, expected);
}

#[test]
fn verbatim_query_recovers_a_cause_at_one() {
    let data = gen_synthetic_line(&SynthParams {
        drift: 1.0,
        ..Default::default()
    })
    .unwrap();
    let g = data.build_graph().unwrap();
    // Query with the first drifted record's own symptom; its direct causes
    // are the ground truth.
    let rec = &data.records[0];
    let symptom = &rec.failures[0];
    let causes: Vec<String> = rec
        .causes
        .iter()
        .filter(|c| c.effect == symptom.key)
        .filter_map(|c| c.cause.as_deref())
        .map(|k| {
            rec.failures
                .iter()
                .find(|f| f.key == k)
                .unwrap()
                .label
                .clone()
        })
        .collect();
    assert!(!causes.is_empty());
    let attach = data.suite.queries[0].attach_hint.clone();
    let suite = EvalSuite {
        name: "verbatim".into(),
        options: Default::default(),
        chunk_options: Default::default(),
        queries: vec![SuiteQuery {
            id: "v".into(),
            description: symptom.label.clone(),
            level: Some(Level::ProcessElementFunction),
            attach_hint: attach,
            items: causes,
            aliases: Default::default(),
        }],
    };
    let r = run_ablation(&g, &suite, &BOTH, &EmbedderConfig::local()).unwrap();
    for m in BOTH {
        assert!(r.result("v", m).unwrap().curve[0].recall > 0.0, "{m}");
    }
}

#[test]
fn repeated_runs_give_identical_tables() {
    let a = synthetic_report(0.8, 7);
    let b = synthetic_report(0.8, 7);
    assert_eq!(a.results_tsv(), b.results_tsv());
    assert_eq!(a.summary_text(), b.summary_text());

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    a.write_to(dir_a.path()).unwrap();
    b.write_to(dir_b.path()).unwrap();
    for f in ["results.tsv", "summary.txt", "report.json"] {
        assert_eq!(
            std::fs::read(dir_a.path().join(f)).unwrap(),
            std::fs::read(dir_b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn unreachable_provider_yields_partial_report() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let data = gen_synthetic_line(&SynthParams {
        processes: 1,
        elements_per_process: 2,
        ..Default::default()
    })
    .unwrap();
    let g = data.build_graph().unwrap();
    let cfg = EmbedderConfig {
        kind: EmbedderKind::Remote,
        endpoint: Some(format!("http://127.0.0.1:{port}/v1/embeddings")),
        model: Some("m".into()),
        key_env: Some("PATH".into()),
        ..EmbedderConfig::local()
    };
    let r = run_ablation(&g, &data.suite, &BOTH, &cfg).unwrap();
    assert!(r.is_partial());
    assert!(r.results.is_empty());
    let i = r.interrupted.as_ref().unwrap();
    assert_eq!(i.code, "embed-transport");
    assert_eq!(i.query_id, data.suite.queries[0].id);
    assert!(r.summary_text().contains("PARTIAL"));
}
