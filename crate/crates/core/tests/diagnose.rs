//! Diagnosis on a small two-process line whose expected answers are traced by
//! hand from the record list below.

use std::collections::{BTreeMap, BTreeSet};

use fbsdiag::diagnose::{infer_causes, DiagnoseOptions, DiagnosisIndex, DiagnosisQuery, Scoring};
use fbsdiag::eval::GroundTruth;
use fbsdiag::ingest::{add_maintenance_record, build_fbs_model, ModelSpec, RecordSpec};
use fbsdiag::{ChunkMethod, ChunkOptions, EmbedderConfig, KnowledgeGraph, Level, NodeId};
use serde_json::json;

fn mini_line() -> KnowledgeGraph {
    let s = |id: &str, label: &str| json!({"id": id, "label": label, "level": "Structure"});
    let model: ModelSpec = serde_json::from_value(json!({
        "entries": [{"id": "L", "label": "mini line", "level": "LineFunction", "children": [
            {"id": "PA", "label": "roof assembly", "level": "ProcessFunction", "children": [
                {"id": "PA.chuck", "label": "chuck the roof", "level": "ProcessElementFunction", "children": [
                    {"id": "PA.chuck.close", "label": "close the chuck jaws", "level": "Behavior", "children": [s("PA.jaw", "chuck jaw")]},
                    {"id": "PA.chuck.hold", "label": "hold the gripping force", "level": "Behavior", "children": [s("PA.force", "force control unit")]}
                ]},
                {"id": "PA.pallet", "label": "position the pallet", "level": "ProcessElementFunction", "children": [
                    {"id": "PA.pallet.stop", "label": "stop the pallet", "level": "Behavior", "children": [s("PA.stopper", "pallet stopper")]}
                ]}
            ]},
            {"id": "PP", "label": "roof press-fitting", "level": "ProcessFunction", "children": [
                {"id": "PP.pallet", "label": "position the pallet", "level": "ProcessElementFunction", "children": [
                    {"id": "PP.pallet.stop", "label": "stop the pallet", "level": "Behavior", "children": [s("PP.stopper", "pallet stopper")]}
                ]},
                {"id": "PP.press", "label": "press the roof", "level": "ProcessElementFunction", "children": [
                    {"id": "PP.press.apply", "label": "apply the press force", "level": "Behavior", "children": [s("PP.reg", "pressure regulator")]}
                ]}
            ]}
        ]}],
        "sequences": [["PA", "PP"], ["PA.chuck", "PA.pallet"], ["PP.pallet", "PP.press"]]
    }))
    .unwrap();
    let mut g = build_fbs_model(&model).unwrap();

    // (record, [(key, label, attach)], [(effect, cause)])
    type Rec<'a> = (
        &'a str,
        &'a [(&'a str, &'a str, &'a str)],
        &'a [(&'a str, &'a str)],
    );
    let records: &[Rec] = &[
        (
            "r1",
            &[
                ("f1", "assembly misalignment", "PA"),
                ("f2", "roof shifted in hand", "PA.chuck"),
                ("f3", "chuck jaw wear", "PA.jaw"),
            ],
            &[("f1", "f2"), ("f2", "f3")],
        ),
        (
            "r2",
            &[
                ("f1", "assembly misalignment", "PA"),
                ("f2", "pallet position deviation", "PA.pallet"),
                ("f3", "pallet overruns the stop", "PA.pallet.stop"),
                ("f4", "pallet stopper wear", "PA.stopper"),
            ],
            &[("f1", "f2"), ("f2", "f3"), ("f3", "f4")],
        ),
        (
            "r3",
            &[
                ("f1", "assembly misalignment", "PA"),
                ("f2", "gripping force drop", "PA.chuck.hold"),
                ("f3", "force control unit setting error", "PA.force"),
                ("f4", "roof shifted in hand", "PA.chuck"),
            ],
            &[("f1", "f2"), ("f1", "f4"), ("f2", "f3"), ("f4", "f3")],
        ),
        (
            "r4",
            &[
                ("f1", "press-fit misalignment", "PP"),
                ("f2", "pallet position deviation at press", "PP.pallet"),
                ("f3", "pallet stopper wear", "PP.stopper"),
            ],
            &[("f1", "f2"), ("f2", "f3")],
        ),
        (
            "r5",
            &[
                ("f1", "press force insufficient", "PP.press"),
                ("f2", "pressure regulator misadjustment", "PP.reg"),
            ],
            &[("f1", "f2")],
        ),
        (
            "r6",
            &[
                ("f1", "roof dropped from chuck", "PA.chuck"),
                ("f2", "chuck jaw breakage", "PA.jaw"),
            ],
            &[("f1", "f2")],
        ),
        (
            "r7",
            &[
                ("f1", "roof assembly stopped", "PA"),
                ("f2", "roof dropped from chuck", "PA.chuck"),
                ("f3", "chuck jaw breakage", "PA.jaw"),
            ],
            &[("f1", "f2"), ("f2", "f3")],
        ),
    ];
    for (rid, failures, causes) in records {
        let rec: RecordSpec = serde_json::from_value(json!({
            "record_id": rid,
            "failures": failures.iter().map(|(k, l, a)| json!({"key": k, "label": l, "category": "accuracy", "attach": a})).collect::<Vec<_>>(),
            "causes": causes.iter().map(|(e, c)| json!({"effect": e, "cause": c})).collect::<Vec<_>>(),
        }))
        .unwrap();
        add_maintenance_record(&mut g, &rec).unwrap();
    }
    g
}

/// Causes of each ProcessFunction-level anchor, traced by hand from the
/// record list in (depth, id) order.
fn traced_process_level() -> BTreeMap<&'static str, Vec<&'static str>> {
    BTreeMap::from([
        ("r1/f1", vec!["r1/f2", "r1/f3"]),
        ("r2/f1", vec!["r2/f2", "r2/f3", "r2/f4"]),
        ("r3/f1", vec!["r3/f2", "r3/f4", "r3/f3"]),
        ("r4/f1", vec!["r4/f2", "r4/f3"]),
        ("r7/f1", vec!["r7/f2", "r7/f3"]),
    ])
}

fn query(text: &str, level: Option<Level>, method: ChunkMethod, n: usize) -> DiagnosisQuery {
    DiagnosisQuery {
        description: text.into(),
        level,
        attach_hint: None,
        method,
        n,
    }
}

fn proposed_index(g: &KnowledgeGraph, level: Level) -> DiagnosisIndex {
    DiagnosisIndex::build(
        g,
        ChunkMethod::Proposed,
        Some(level),
        ChunkOptions::default(),
        &EmbedderConfig::local(),
    )
    .unwrap()
}

#[test]
fn assembly_misalignment_candidates_match_hand_trace() {
    let g = mini_line();
    let idx = proposed_index(&g, Level::ProcessFunction);
    let traced = traced_process_level();
    for k in [1, 2, 3, 10] {
        let q = query(
            "assembly misalignment",
            Some(Level::ProcessFunction),
            ChunkMethod::Proposed,
            100,
        );
        let out = infer_causes(
            &g,
            &idx,
            &q,
            &DiagnoseOptions {
                k,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.retrieved.len(), k.min(traced.len()));
        let mut expected = Vec::new();
        for (chunk_id, _) in &out.retrieved {
            let anchor = idx.chunk(chunk_id).unwrap().anchor_failure_id.as_str();
            expected.extend(traced[anchor].iter().copied());
        }
        let got: Vec<&str> = out.causes.iter().map(|c| c.failure_id.as_str()).collect();
        assert_eq!(got, expected, "k={k}");
        let got_set: BTreeSet<&str> = got.iter().copied().collect();
        assert_eq!(got_set, expected.iter().copied().collect());
    }
    // The three records that use the query wording outrank the rest.
    let q = query(
        "assembly misalignment",
        Some(Level::ProcessFunction),
        ChunkMethod::Proposed,
        3,
    );
    let out = infer_causes(&g, &idx, &q, &DiagnoseOptions::default()).unwrap();
    let top: BTreeSet<&str> = out.retrieved[..3]
        .iter()
        .map(|(id, _)| idx.chunk(id).unwrap().anchor_failure_id.as_str())
        .collect();
    assert_eq!(top, BTreeSet::from(["r1/f1", "r2/f1", "r3/f1"]));
}

#[test]
fn verbatim_record_gives_its_direct_cause_first() {
    let g = mini_line();
    let baseline = DiagnosisIndex::build(
        &g,
        ChunkMethod::Baseline,
        None,
        ChunkOptions::default(),
        &EmbedderConfig::local(),
    )
    .unwrap();
    let out = infer_causes(
        &g,
        &baseline,
        &query("press force insufficient", None, ChunkMethod::Baseline, 5),
        &DiagnoseOptions::default(),
    )
    .unwrap();
    assert_eq!(out.causes[0].failure_id.as_str(), "r5/f2");

    let idx = proposed_index(&g, Level::ProcessElementFunction);
    let q = query(
        "press force insufficient",
        Some(Level::ProcessElementFunction),
        ChunkMethod::Proposed,
        5,
    );
    let out = infer_causes(&g, &idx, &q, &DiagnoseOptions::default()).unwrap();
    assert_eq!(out.causes[0].failure_id.as_str(), "r5/f2");
    assert_eq!(out.causes[0].rank, 1);
}

#[test]
fn truncation_to_n() {
    let g = mini_line();
    let idx = proposed_index(&g, Level::ProcessFunction);
    for n in [1, 4, 7, 100] {
        let q = query(
            "assembly misalignment",
            Some(Level::ProcessFunction),
            ChunkMethod::Proposed,
            n,
        );
        let out = infer_causes(&g, &idx, &q, &DiagnoseOptions::default()).unwrap();
        let available: usize = traced_process_level().values().map(Vec::len).sum();
        assert_eq!(out.causes.len(), n.min(available));
    }
}

#[test]
fn proposed_candidates_stay_at_or_below_query_level() {
    let g = mini_line();
    for level in [
        Level::ProcessFunction,
        Level::ProcessElementFunction,
        Level::Behavior,
    ] {
        let idx = proposed_index(&g, level);
        let q = query(
            "roof shifted in hand chuck",
            Some(level),
            ChunkMethod::Proposed,
            50,
        );
        let out = infer_causes(&g, &idx, &q, &DiagnoseOptions::default()).unwrap();
        for c in &out.causes {
            assert!(g.attachment_level(&c.failure_id).unwrap().rank() >= level.rank());
            assert!(!c.provenance.is_empty());
            for p in &c.provenance {
                assert!(out.retrieved.iter().any(|(id, _)| id == p));
                assert!(idx
                    .chunk(p)
                    .unwrap()
                    .member_failure_ids
                    .contains(&c.failure_id));
            }
        }
    }
}

#[test]
fn dedup_keeps_distinct_labels_and_never_loses_recall() {
    let g = mini_line();
    let gt = GroundTruth::new(
        "q",
        vec![
            "chuck jaw wear".into(),
            "pallet stopper wear".into(),
            "roof shifted in hand".into(),
            "chuck jaw breakage".into(),
        ],
    );
    for method in [ChunkMethod::Proposed, ChunkMethod::Baseline] {
        let idx = DiagnosisIndex::build(
            &g,
            method,
            Some(Level::ProcessFunction),
            ChunkOptions::default(),
            &EmbedderConfig::local(),
        )
        .unwrap();
        let level = (method == ChunkMethod::Proposed).then_some(Level::ProcessFunction);
        for n in 1..=8 {
            let q = query("assembly misalignment roof", level, method, n);
            let plain = infer_causes(&g, &idx, &q, &DiagnoseOptions::default()).unwrap();
            let dedup = infer_causes(
                &g,
                &idx,
                &q,
                &DiagnoseOptions {
                    dedup: true,
                    ..Default::default()
                },
            )
            .unwrap();
            let labels: Vec<String> = dedup
                .causes
                .iter()
                .map(|c| c.label.to_lowercase())
                .collect();
            assert_eq!(labels.iter().collect::<BTreeSet<_>>().len(), labels.len());
            let r = |list: &fbsdiag::RankedCauseList| {
                fbsdiag::eval::recall_at_n(&list.labels(), &gt, n)
            };
            assert!(r(&dedup) >= r(&plain));
        }
    }
}

#[test]
fn attach_hint_limits_anchors_to_subtree() {
    let g = mini_line();
    let idx = proposed_index(&g, Level::ProcessFunction);
    let mut q = query(
        "misalignment",
        Some(Level::ProcessFunction),
        ChunkMethod::Proposed,
        10,
    );
    q.attach_hint = Some(NodeId::from("PP"));
    let out = infer_causes(&g, &idx, &q, &DiagnoseOptions::default()).unwrap();
    let got: Vec<&str> = out.causes.iter().map(|c| c.failure_id.as_str()).collect();
    assert_eq!(got, ["r4/f2", "r4/f3"]);
}

#[test]
fn depth_discount_scales_and_orders() {
    let g = mini_line();
    let idx = proposed_index(&g, Level::ProcessFunction);
    let q = query(
        "assembly misalignment",
        Some(Level::ProcessFunction),
        ChunkMethod::Proposed,
        100,
    );
    let opts = DiagnoseOptions {
        scoring: Scoring::DepthDiscounted,
        ..Default::default()
    };
    let out = infer_causes(&g, &idx, &q, &opts).unwrap();
    let chunk_score: BTreeMap<&str, f64> = out
        .retrieved
        .iter()
        .map(|(id, s)| (id.as_str(), *s))
        .collect();
    for c in &out.causes {
        let base = chunk_score[c.provenance[0].as_str()];
        assert!((c.score - base * 0.9f64.powi(c.depth as i32)).abs() < 1e-12);
    }
    assert!(out.causes.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn identical_queries_identical_lists() {
    let g = mini_line();
    let idx = proposed_index(&g, Level::ProcessElementFunction);
    let q = query(
        "roof dropped from chuck",
        Some(Level::ProcessElementFunction),
        ChunkMethod::Proposed,
        5,
    );
    let a = infer_causes(&g, &idx, &q, &DiagnoseOptions::default()).unwrap();
    let b = infer_causes(&g, &idx, &q, &DiagnoseOptions::default()).unwrap();
    assert_eq!(a, b);
}
