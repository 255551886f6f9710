//! Commissioning-time FBS model construction and run-time maintenance record
//! storage.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ontology::{
    Edge, FailureCategory, FailureNode, GraphError, GraphMetadata, KnowledgeGraph, Level, NodeId,
    RecordInfo, SystemNode, ValidationReport,
};
use crate::store::{self, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    /// Derived from the label path when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub label: String,
    pub level: Level,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ModelEntry>,
}

/// Declarative description of a line: an entry tree plus ordered sequences of
/// same-level entries (each later member is `step_After` the previous one).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
    pub entries: Vec<ModelEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sequences: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub key: String,
    pub label: String,
    pub category: FailureCategory,
    #[serde(default)]
    pub description: String,
    /// SystemNode id the failure occurred at.
    pub attach: String,
}

/// `effect` always names a local key. The cause is either another local key
/// or, to link across records, an existing failure id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausePair {
    pub effect: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause_existing: Option<String>,
}

impl CausePair {
    pub fn local(effect: impl Into<String>, cause: impl Into<String>) -> Self {
        CausePair {
            effect: effect.into(),
            cause: Some(cause.into()),
            cause_existing: None,
        }
    }

    pub fn existing(effect: impl Into<String>, failure_id: impl Into<String>) -> Self {
        CausePair {
            effect: effect.into(),
            cause: None,
            cause_existing: Some(failure_id.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSpec {
    pub record_id: String,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub date: String,
    pub failures: Vec<FailureEntry>,
    #[serde(default)]
    pub causes: Vec<CausePair>,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("entry `{entry}` at level {child} cannot sit under a {parent:?} entry")]
    LevelAdjacency {
        entry: String,
        parent: Option<Level>,
        child: Level,
    },
    #[error("duplicate label `{label}` under `{parent}`")]
    DuplicateLabel { parent: String, label: String },
    #[error("sequence names unknown entry `{0}`")]
    UnknownSequenceMember(String),
    #[error("attach id `{0}` is not a system node of the graph")]
    UnknownAttach(String),
    #[error("cause pair references undeclared key `{0}`")]
    UndeclaredKey(String),
    #[error("failure key `{0}` declared twice")]
    DuplicateKey(String),
    #[error("record `{0}` already stored")]
    DuplicateRecord(String),
    #[error("cause_existing `{0}` is not a stored failure")]
    UnknownExistingFailure(String),
    #[error("cause pair for `{0}` must set exactly one of cause / cause_existing")]
    MalformedCausePair(String),
    #[error("record `{0}` has no failures")]
    EmptyRecord(String),
    #[error("target graph has not been validated")]
    NotValidated,
    #[error("{0}")]
    Graph(#[from] GraphError),
    #[error("resulting graph is invalid: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::LevelAdjacency { .. } => "level-adjacency",
            IngestError::DuplicateLabel { .. } => "duplicate-label",
            IngestError::UnknownSequenceMember(_) => "unknown-sequence-member",
            IngestError::UnknownAttach(_) => "unknown-attach",
            IngestError::UndeclaredKey(_) => "undeclared-key",
            IngestError::DuplicateKey(_) => "duplicate-key",
            IngestError::DuplicateRecord(_) => "duplicate-record",
            IngestError::UnknownExistingFailure(_) => "unknown-existing-failure",
            IngestError::MalformedCausePair(_) => "malformed-cause-pair",
            IngestError::EmptyRecord(_) => "empty-record",
            IngestError::NotValidated => "unvalidated-graph",
            IngestError::Graph(e) => e.code(),
            IngestError::Invalid(_) => "validation-error",
            IngestError::Store(e) => e.code(),
        }
    }
}

fn slug(label: &str) -> String {
    let mut out = String::new();
    for word in label
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        if !out.is_empty() {
            out.push('-');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Builds a validated graph with one system node per entry.
pub fn build_fbs_model(spec: &ModelSpec) -> Result<KnowledgeGraph, IngestError> {
    let mut graph = KnowledgeGraph::new();
    graph.metadata = GraphMetadata {
        created: None,
        source: spec.source.clone(),
    };

    fn visit(
        graph: &mut KnowledgeGraph,
        entry: &ModelEntry,
        parent: Option<(&NodeId, Level)>,
    ) -> Result<(), IngestError> {
        let expected = match parent {
            Some((_, level)) => level.child(),
            None => Some(Level::LineFunction),
        };
        if expected != Some(entry.level) {
            return Err(IngestError::LevelAdjacency {
                entry: entry.label.clone(),
                parent: parent.map(|p| p.1),
                child: entry.level,
            });
        }
        let id = match (&entry.id, parent) {
            (Some(id), _) => NodeId::new(id.clone()),
            (None, Some((pid, _))) => NodeId::new(format!("{pid}/{}", slug(&entry.label))),
            (None, None) => NodeId::new(slug(&entry.label)),
        };
        let node = SystemNode::new(id.clone(), entry.label.clone(), entry.level)
            .with_description(entry.description.clone());
        graph.add_system_node(node)?;
        if let Some((pid, _)) = parent {
            graph.add_edge(Edge::has_part(pid.clone(), id.clone()))?;
        }
        let mut labels = BTreeSet::new();
        for child in &entry.children {
            if !labels.insert(child.label.as_str()) {
                return Err(IngestError::DuplicateLabel {
                    parent: id.to_string(),
                    label: child.label.clone(),
                });
            }
        }
        for child in &entry.children {
            visit(graph, child, Some((&id, entry.level)))?;
        }
        Ok(())
    }

    let mut root_labels = BTreeSet::new();
    for entry in &spec.entries {
        if !root_labels.insert(entry.label.as_str()) {
            return Err(IngestError::DuplicateLabel {
                parent: String::new(),
                label: entry.label.clone(),
            });
        }
        visit(&mut graph, entry, None)?;
    }

    for seq in &spec.sequences {
        for id in seq {
            if graph.system_node(&NodeId::new(id.clone())).is_none() {
                return Err(IngestError::UnknownSequenceMember(id.clone()));
            }
        }
        for pair in seq.windows(2) {
            graph.add_edge(Edge::step_after(pair[1].as_str(), pair[0].as_str()))?;
        }
    }

    let report = graph.validate_graph();
    if !report.is_empty() {
        return Err(IngestError::Invalid(report));
    }
    Ok(graph)
}

pub fn failure_id(record_id: &str, key: &str) -> NodeId {
    NodeId::new(format!("{record_id}/{key}"))
}

/// Stores one record atomically: on any error the graph is left untouched.
/// Returns the record id.
pub fn add_maintenance_record(
    graph: &mut KnowledgeGraph,
    rec: &RecordSpec,
) -> Result<String, IngestError> {
    if !graph.is_validated() {
        return Err(IngestError::NotValidated);
    }
    if graph.record(&rec.record_id).is_some()
        || graph.failure_nodes().any(|f| f.record_id == rec.record_id)
    {
        return Err(IngestError::DuplicateRecord(rec.record_id.clone()));
    }
    if rec.failures.is_empty() {
        return Err(IngestError::EmptyRecord(rec.record_id.clone()));
    }

    let mut keys = BTreeMap::new();
    for f in &rec.failures {
        if keys.insert(f.key.as_str(), f).is_some() {
            return Err(IngestError::DuplicateKey(f.key.clone()));
        }
        if graph.system_node(&NodeId::new(f.attach.clone())).is_none() {
            return Err(IngestError::UnknownAttach(f.attach.clone()));
        }
    }
    let mut cause_edges = Vec::with_capacity(rec.causes.len());
    for pair in &rec.causes {
        if !keys.contains_key(pair.effect.as_str()) {
            return Err(IngestError::UndeclaredKey(pair.effect.clone()));
        }
        let effect = failure_id(&rec.record_id, &pair.effect);
        let cause = match (&pair.cause, &pair.cause_existing) {
            (Some(key), None) => {
                if !keys.contains_key(key.as_str()) {
                    return Err(IngestError::UndeclaredKey(key.clone()));
                }
                failure_id(&rec.record_id, key)
            }
            (None, Some(existing)) => {
                let id = NodeId::new(existing.clone());
                if graph.failure_node(&id).is_none() {
                    return Err(IngestError::UnknownExistingFailure(existing.clone()));
                }
                id
            }
            _ => return Err(IngestError::MalformedCausePair(pair.effect.clone())),
        };
        cause_edges.push(Edge::has_cause(effect, cause));
    }

    let mut next = graph.clone();
    next.upsert_record(RecordInfo {
        record_id: rec.record_id.clone(),
        author: rec.author.clone(),
        date: rec.date.clone(),
    });
    for f in &rec.failures {
        let id = failure_id(&rec.record_id, &f.key);
        next.add_failure_node(FailureNode {
            id: id.clone(),
            label: f.label.clone(),
            category: f.category.clone(),
            description: f.description.clone(),
            record_id: rec.record_id.clone(),
        })?;
        next.add_edge(Edge::has_failure(f.attach.as_str(), id))?;
    }
    for edge in cause_edges {
        next.add_edge(edge)?;
    }
    // The base graph was valid and every edge above went through the checked
    // insert (local rules, single attachment, acyclicity). A record adds no
    // system nodes and attaches each new failure exactly once, so the result
    // is valid without a full pass.
    next.mark_validated();
    *graph = next;
    Ok(rec.record_id.clone())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub record_id: String,
    pub failure_count: usize,
    /// Distinct attachment levels, in hierarchy order.
    pub attach_levels: Vec<Level>,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub date: String,
}

/// One row per distinct record id, ordered by record id.
pub fn list_records(graph: &KnowledgeGraph) -> Vec<RecordSummary> {
    let mut rows: BTreeMap<&str, (usize, BTreeSet<Level>)> = BTreeMap::new();
    for info in graph.records() {
        rows.entry(info.record_id.as_str()).or_default();
    }
    for f in graph.failure_nodes() {
        let row = rows.entry(f.record_id.as_str()).or_default();
        row.0 += 1;
        if let Some(level) = graph.attachment_level(&f.id) {
            row.1.insert(level);
        }
    }
    rows.into_iter()
        .map(|(id, (count, levels))| {
            let info = graph.record(id);
            RecordSummary {
                record_id: id.to_string(),
                failure_count: count,
                attach_levels: levels.into_iter().collect(),
                author: info.map(|i| i.author.clone()).unwrap_or_default(),
                date: info.map(|i| i.date.clone()).unwrap_or_default(),
            }
        })
        .collect()
}

pub fn read_model_spec(path: &Path) -> Result<ModelSpec, StoreError> {
    store::read_structured(path)
}

/// Accepts either a single record object or a list of records.
pub fn read_record_specs(path: &Path) -> Result<Vec<RecordSpec>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_record_specs(&text, path)
}

pub fn parse_record_specs(text: &str, path: &Path) -> Result<Vec<RecordSpec>, StoreError> {
    if text.trim_start().starts_with('[') {
        store::parse_structured(text, path)
    } else {
        store::parse_structured(text, path).map(|r| vec![r])
    }
}
