//! Precision@n / Recall@n scoring and the proposed-vs-baseline ablation.

mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chunker::{ChunkMethod, ChunkOptions};
use crate::diagnose::{
    infer_causes, DiagnoseError, DiagnoseOptions, DiagnosisIndex, DiagnosisQuery,
};
use crate::embed::EmbedderConfig;
use crate::ontology::{KnowledgeGraph, Level, NodeId};
use crate::store::{self, StoreError};

pub use synth::{gen_synthetic_line, SynonymTable, SynthError, SynthParams, SyntheticDataset};

/// Case-folds and collapses whitespace runs to single spaces.
pub fn normalize_label(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub query_id: String,
    pub items: Vec<String>,
    /// Canonical label -> accepted surface forms.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aliases: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GroundTruthError {
    #[error("ground truth for `{0}` has no items")]
    Empty(String),
    #[error("ground truth for `{query}`: alias key `{label}` is not an item")]
    UnknownAliasKey { query: String, label: String },
    #[error(
        "ground truth for `{query}`: form `{form}` is claimed by both `{first}` and `{second}`"
    )]
    OverlappingAlias {
        query: String,
        form: String,
        first: String,
        second: String,
    },
}

impl GroundTruth {
    pub fn new(query_id: impl Into<String>, items: Vec<String>) -> Self {
        GroundTruth {
            query_id: query_id.into(),
            items,
            aliases: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GroundTruthError> {
        if self.items.is_empty() {
            return Err(GroundTruthError::Empty(self.query_id.clone()));
        }
        let items: BTreeSet<&str> = self.items.iter().map(String::as_str).collect();
        let mut owner: BTreeMap<String, &str> = BTreeMap::new();
        for item in &self.items {
            owner.entry(normalize_label(item)).or_insert(item);
        }
        for (label, forms) in &self.aliases {
            if !items.contains(label.as_str()) {
                return Err(GroundTruthError::UnknownAliasKey {
                    query: self.query_id.clone(),
                    label: label.clone(),
                });
            }
            for form in forms {
                let key = normalize_label(form);
                match owner.get(&key) {
                    Some(prev) if *prev != label.as_str() => {
                        return Err(GroundTruthError::OverlappingAlias {
                            query: self.query_id.clone(),
                            form: form.clone(),
                            first: prev.to_string(),
                            second: label.clone(),
                        })
                    }
                    _ => {
                        owner.insert(key, label);
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical item an output label matches, comparing normalized forms
    /// against items first, then aliases. First match in item order wins.
    pub fn match_label(&self, output: &str) -> Option<&str> {
        let key = normalize_label(output);
        for item in &self.items {
            if normalize_label(item) == key {
                return Some(item);
            }
            if let Some(forms) = self.aliases.get(item) {
                if forms.iter().any(|f| normalize_label(f) == key) {
                    return Some(item);
                }
            }
        }
        None
    }
}

/// Matched outputs in the top `n` over `n`. Repeats each count.
pub fn precision_at_n<S: AsRef<str>>(outputs: &[S], gt: &GroundTruth, n: usize) -> f64 {
    assert!(n >= 1, "n must be at least 1");
    let hits = outputs
        .iter()
        .take(n)
        .filter(|o| gt.match_label(o.as_ref()).is_some())
        .count();
    hits as f64 / n as f64
}

/// Distinct items matched in the top `n` over the number of items.
pub fn recall_at_n<S: AsRef<str>>(outputs: &[S], gt: &GroundTruth, n: usize) -> f64 {
    assert!(n >= 1, "n must be at least 1");
    let covered: BTreeSet<&str> = outputs
        .iter()
        .take(n)
        .filter_map(|o| gt.match_label(o.as_ref()))
        .collect();
    covered.len() as f64 / gt.items.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub query_id: String,
    pub method: ChunkMethod,
    /// Output labels, at most `|items|` of them.
    pub outputs: Vec<String>,
    /// One point per n in `1..=|items|`.
    pub curve: Vec<CurvePoint>,
}

impl EvalResult {
    pub fn score(
        query_id: &str,
        method: ChunkMethod,
        outputs: Vec<String>,
        gt: &GroundTruth,
    ) -> Self {
        let curve = (1..=gt.items.len())
            .map(|n| CurvePoint {
                n,
                precision: precision_at_n(&outputs, gt, n),
                recall: recall_at_n(&outputs, gt, n),
            })
            .collect();
        EvalResult {
            query_id: query_id.to_string(),
            method,
            outputs,
            curve,
        }
    }

    /// The point at n = |items|.
    pub fn last(&self) -> CurvePoint {
        *self.curve.last().expect("ground truth is never empty")
    }
}

/// A query together with its expert answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteQuery {
    pub id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attach_hint: Option<NodeId>,
    pub items: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aliases: BTreeMap<String, Vec<String>>,
}

impl SuiteQuery {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            query_id: self.id.clone(),
            items: self.items.clone(),
            aliases: self.aliases.clone(),
        }
    }
}

/// Evaluation suite file: queries, ground truths and retrieval settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSuite {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub options: DiagnoseOptions,
    #[serde(default)]
    pub chunk_options: ChunkOptions,
    pub queries: Vec<SuiteQuery>,
}

pub fn read_suite(path: &Path) -> Result<EvalSuite, StoreError> {
    store::read_structured(path)
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    GroundTruth(#[from] GroundTruthError),
    #[error("query `{0}` needs a level for the proposed method")]
    LevelMissing(String),
    #[error("duplicate query id `{0}`")]
    DuplicateQuery(String),
    #[error("no methods selected")]
    NoMethods,
    #[error("graph has not been validated")]
    Unvalidated,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::GroundTruth(_) => "invalid-ground-truth",
            EvalError::LevelMissing(_) => "level-missing",
            EvalError::DuplicateQuery(_) => "duplicate-query",
            EvalError::NoMethods => "no-methods",
            EvalError::Unvalidated => "unvalidated-graph",
            EvalError::Io { .. } => "io-error",
            EvalError::Store(e) => e.code(),
        }
    }
}

/// Why an ablation stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interruption {
    pub query_id: String,
    pub method: ChunkMethod,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: String,
    pub methods: Vec<ChunkMethod>,
    pub results: Vec<EvalResult>,
    /// Set when a provider or retrieval failure cut the run short; `results`
    /// then holds everything finished before it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interrupted: Option<Interruption>,
}

impl AblationReport {
    pub fn is_partial(&self) -> bool {
        self.interrupted.is_some()
    }

    pub fn result(&self, query_id: &str, method: ChunkMethod) -> Option<&EvalResult> {
        self.results
            .iter()
            .find(|r| r.query_id == query_id && r.method == method)
    }

    /// Mean of R@N over the queries finished for `method`.
    pub fn mean_final_recall(&self, method: ChunkMethod) -> Option<f64> {
        let xs: Vec<f64> = self
            .results
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.last().recall)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    pub fn mean_final_precision(&self, method: ChunkMethod) -> Option<f64> {
        let xs: Vec<f64> = self
            .results
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.last().precision)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    /// `query method n precision recall`, one row per curve point.
    pub fn results_tsv(&self) -> String {
        let mut out = String::from("query\tmethod\tn\tprecision\trecall\n");
        for r in &self.results {
            for p in &r.curve {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{:.6}\t{:.6}",
                    r.query_id, r.method, p.n, p.precision, p.recall
                );
            }
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "suite: {}",
            if self.suite.is_empty() {
                "(unnamed)"
            } else {
                &self.suite
            }
        );
        let _ = writeln!(
            out,
            "status: {}",
            if self.is_partial() {
                "PARTIAL"
            } else {
                "complete"
            }
        );
        if let Some(i) = &self.interrupted {
            let _ = writeln!(
                out,
                "interrupted at query {} ({}): [{}] {}",
                i.query_id, i.method, i.code, i.message
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "query\tmethod\tN\tP@N\tR@N");
        for r in &self.results {
            let p = r.last();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.4}\t{:.4}",
                r.query_id, r.method, p.n, p.precision, p.recall
            );
        }
        let _ = writeln!(out);
        for m in &self.methods {
            let count = self.results.iter().filter(|r| r.method == *m).count();
            match (self.mean_final_precision(*m), self.mean_final_recall(*m)) {
                (Some(p), Some(r)) => {
                    let _ = writeln!(
                        out,
                        "mean {m}: P@N {p:.4}  R@N {r:.4}  over {count} queries"
                    );
                }
                _ => {
                    let _ = writeln!(out, "mean {m}: no finished queries");
                }
            }
        }
        out
    }

    /// Writes `results.tsv`, `summary.txt` and `report.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir).map_err(|e| EvalError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        store::write_atomic(&dir.join("results.tsv"), self.results_tsv().as_bytes())?;
        store::write_atomic(&dir.join("summary.txt"), self.summary_text().as_bytes())?;
        let mut json = serde_json::to_string_pretty(self).expect("report serializes");
        json.push('\n');
        store::write_atomic(&dir.join("report.json"), json.as_bytes())?;
        Ok(())
    }
}

fn check_suite(suite: &EvalSuite, methods: &[ChunkMethod]) -> Result<(), EvalError> {
    if methods.is_empty() {
        return Err(EvalError::NoMethods);
    }
    let mut ids = BTreeSet::new();
    for q in &suite.queries {
        if !ids.insert(q.id.as_str()) {
            return Err(EvalError::DuplicateQuery(q.id.clone()));
        }
        q.ground_truth().validate()?;
        if methods.contains(&ChunkMethod::Proposed) && q.level.is_none() {
            return Err(EvalError::LevelMissing(q.id.clone()));
        }
    }
    Ok(())
}

/// Runs every suite query through every method with `n = |items|` and scores
/// the outputs for each n. Indexes are built once per (method, level).
///
/// Suite problems are errors. Failures while embedding or retrieving stop the
/// run and are reported in [`AblationReport::interrupted`] alongside the
/// results gathered so far.
pub fn run_ablation(
    graph: &KnowledgeGraph,
    suite: &EvalSuite,
    methods: &[ChunkMethod],
    embedder: &EmbedderConfig,
) -> Result<AblationReport, EvalError> {
    if !graph.is_validated() {
        return Err(EvalError::Unvalidated);
    }
    check_suite(suite, methods)?;
    let mut report = AblationReport {
        suite: suite.name.clone(),
        methods: methods.to_vec(),
        results: Vec::new(),
        interrupted: None,
    };
    let mut indexes: BTreeMap<(ChunkMethod, Option<Level>), DiagnosisIndex> = BTreeMap::new();

    for q in &suite.queries {
        let gt = q.ground_truth();
        for &method in methods {
            let level = if method == ChunkMethod::Proposed {
                q.level
            } else {
                None
            };
            let outcome = run_one(graph, suite, q, method, level, embedder, &mut indexes);
            match outcome {
                Ok(outputs) => report
                    .results
                    .push(EvalResult::score(&q.id, method, outputs, &gt)),
                Err(e) => {
                    report.interrupted = Some(Interruption {
                        query_id: q.id.clone(),
                        method,
                        code: e.code().to_string(),
                        message: e.to_string(),
                    });
                    return Ok(report);
                }
            }
        }
    }
    Ok(report)
}

fn run_one(
    graph: &KnowledgeGraph,
    suite: &EvalSuite,
    q: &SuiteQuery,
    method: ChunkMethod,
    level: Option<Level>,
    embedder: &EmbedderConfig,
    indexes: &mut BTreeMap<(ChunkMethod, Option<Level>), DiagnosisIndex>,
) -> Result<Vec<String>, DiagnoseError> {
    let index = match indexes.entry((method, level)) {
        std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
        std::collections::btree_map::Entry::Vacant(e) => e.insert(DiagnosisIndex::build(
            graph,
            method,
            level,
            suite.chunk_options,
            embedder,
        )?),
    };
    let query = DiagnosisQuery {
        description: q.description.clone(),
        level,
        attach_hint: if method == ChunkMethod::Proposed {
            q.attach_hint.clone()
        } else {
            None
        },
        method,
        n: q.items.len(),
    };
    let options: DiagnoseOptions = suite.options;
    Ok(infer_causes(graph, index, &query, &options)?
        .causes
        .into_iter()
        .map(|c| c.label)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt8() -> GroundTruth {
        GroundTruth::new("q", (1..=8).map(|i| format!("cause {i}")).collect())
    }

    #[test]
    fn duplicates_count_for_precision_only() {
        // 5 distinct correct outputs plus 3 repeats of them.
        let outputs = [
            "cause 1", "cause 2", "cause 1", "cause 3", "cause 4", "cause 2", "cause 5", "cause 5",
        ];
        assert_eq!(precision_at_n(&outputs, &gt8(), 8), 1.0);
        assert_eq!(recall_at_n(&outputs, &gt8(), 8), 0.625);
    }

    #[test]
    fn half_precision_case() {
        // 4 matches, two of them the same item.
        let outputs = [
            "cause 1", "x", "cause 2", "y", "cause 1", "z", "cause 3", "w",
        ];
        assert_eq!(precision_at_n(&outputs, &gt8(), 8), 0.5);
        assert_eq!(recall_at_n(&outputs, &gt8(), 8), 0.375);
    }

    #[test]
    fn no_matches() {
        let outputs = ["a", "b"];
        assert_eq!(precision_at_n(&outputs, &gt8(), 2), 0.0);
        assert_eq!(recall_at_n(&outputs, &gt8(), 2), 0.0);
    }

    #[test]
    fn matching_normalizes_and_uses_aliases() {
        let mut gt = GroundTruth::new("q", vec!["chuck wear".into(), "air leak".into()]);
        gt.aliases
            .insert("air leak".into(), vec!["Pneumatic   leakage".into()]);
        assert_eq!(gt.match_label("Chuck Wear "), Some("chuck wear"));
        assert_eq!(gt.match_label("pneumatic leakage"), Some("air leak"));
        assert_eq!(gt.match_label("belt snapped"), None);
        assert!(gt.validate().is_ok());
    }

    #[test]
    fn ground_truth_validation() {
        assert!(matches!(
            GroundTruth::new("q", vec![]).validate(),
            Err(GroundTruthError::Empty(_))
        ));
        let mut gt = GroundTruth::new("q", vec!["a".into(), "b".into()]);
        gt.aliases.insert("a".into(), vec!["x".into()]);
        gt.aliases.insert("b".into(), vec!["X".into()]);
        assert!(matches!(
            gt.validate(),
            Err(GroundTruthError::OverlappingAlias { .. })
        ));
        let mut gt = GroundTruth::new("q", vec!["a".into()]);
        gt.aliases.insert("c".into(), vec!["x".into()]);
        assert!(matches!(
            gt.validate(),
            Err(GroundTruthError::UnknownAliasKey { .. })
        ));
        let mut gt = GroundTruth::new("q", vec!["a".into(), "b".into()]);
        gt.aliases.insert("a".into(), vec!["B".into()]);
        assert!(matches!(
            gt.validate(),
            Err(GroundTruthError::OverlappingAlias { .. })
        ));
    }

    #[test]
    fn curve_has_one_point_per_item() {
        let r = EvalResult::score(
            "q",
            ChunkMethod::Baseline,
            vec!["cause 1".into(), "cause 1".into()],
            &gt8(),
        );
        assert_eq!(r.curve.len(), 8);
        assert_eq!(
            r.curve[1],
            CurvePoint {
                n: 2,
                precision: 1.0,
                recall: 0.125
            }
        );
        assert_eq!(r.last().precision, 0.25);
    }
}
