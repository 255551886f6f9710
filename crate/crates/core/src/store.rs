//! On-disk graph documents (`.dkg`) and interchange exports for external
//! property-graph databases.
//!
//! A document is pretty-printed JSON with nodes sorted by id and edges sorted
//! by `(kind, src, dst)`, so saving the same graph always yields the same bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ontology::{
    Edge, EdgeKind, FailureCategory, FailureNode, GraphError, GraphMetadata, KnowledgeGraph, Level,
    NodeId, RecordInfo, SystemNode, ValidationReport,
};

pub const FORMAT_VERSION: &str = "1";
pub const NODES_FILE: &str = "nodes.csv";
pub const RELATIONSHIPS_FILE: &str = "relationships.csv";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: at `{field}`: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("{path}: unsupported format_version `{found}` (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: String },
    #[error("refusing to save a graph that has not passed validation")]
    Unvalidated,
    #[error("{path}: graph is invalid: {report}")]
    Invalid {
        path: PathBuf,
        report: ValidationReport,
    },
    #[error("{path}: {source}")]
    Graph {
        path: PathBuf,
        #[source]
        source: GraphError,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io { .. } => "io-error",
            StoreError::Parse { .. } | StoreError::Csv { .. } => "parse-error",
            StoreError::Version { .. } => "version-error",
            StoreError::Unvalidated => "unvalidated-graph",
            StoreError::Invalid { .. } | StoreError::Graph { .. } => "validation-error",
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Flat, serializable mirror of a [`KnowledgeGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub format_version: String,
    #[serde(default)]
    pub metadata: GraphMetadata,
    pub system_nodes: Vec<SystemNode>,
    pub failure_nodes: Vec<FailureNode>,
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub records: Vec<RecordInfo>,
}

impl GraphDocument {
    pub fn from_graph(graph: &KnowledgeGraph) -> Self {
        GraphDocument {
            format_version: FORMAT_VERSION.to_string(),
            metadata: graph.metadata.clone(),
            system_nodes: graph.system_nodes().cloned().collect(),
            failure_nodes: graph.failure_nodes().cloned().collect(),
            edges: graph.edges().cloned().collect(),
            records: graph.records().cloned().collect(),
        }
    }

    /// Rebuilds the graph without rule checks, then validates it. Dangling
    /// ids and schema violations come back as [`StoreError::Invalid`].
    pub fn into_graph(self, path: &Path) -> Result<KnowledgeGraph, StoreError> {
        if self.format_version != FORMAT_VERSION {
            return Err(StoreError::Version {
                path: path.to_path_buf(),
                found: self.format_version,
            });
        }
        let graph_err = |source| StoreError::Graph {
            path: path.to_path_buf(),
            source,
        };
        let mut graph = KnowledgeGraph::new();
        graph.metadata = self.metadata;
        for node in self.system_nodes {
            graph.add_system_node(node).map_err(graph_err)?;
        }
        for node in self.failure_nodes {
            graph.add_failure_node(node).map_err(graph_err)?;
        }
        for record in self.records {
            graph.upsert_record(record);
        }
        for edge in self.edges {
            if !graph.insert_edge_unchecked(edge.clone()) {
                return Err(graph_err(GraphError::Violation(
                    crate::ontology::Violation::new(
                        crate::ontology::ViolationCode::DuplicateEdge,
                        format!("edge {edge} listed twice"),
                        vec![edge.src, edge.dst],
                    ),
                )));
            }
        }
        let report = graph.validate_graph();
        if !report.is_empty() {
            return Err(StoreError::Invalid {
                path: path.to_path_buf(),
                report,
            });
        }
        Ok(graph)
    }
}

/// Canonical text of a graph document, newline terminated.
pub fn to_canonical_string(graph: &KnowledgeGraph) -> String {
    let mut text = serde_json::to_string_pretty(&GraphDocument::from_graph(graph))
        .expect("graph documents always serialize");
    text.push('\n');
    text
}

/// Writes the canonical document atomically (temp file + rename).
pub fn save_graph(graph: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<(), StoreError> {
    if !graph.is_validated() {
        return Err(StoreError::Unvalidated);
    }
    write_atomic(path.as_ref(), to_canonical_string(graph).as_bytes())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<KnowledgeGraph, StoreError> {
    let path = path.as_ref();
    let doc: GraphDocument = read_structured(path)?;
    doc.into_graph(path)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| StoreError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| StoreError::io(path, e))?;
    tmp.flush().map_err(|e| StoreError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| StoreError::io(path, e.error))?;
    Ok(())
}

/// Reads any structured-text file, reporting parse failures with line,
/// column and the field path that failed.
pub fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    parse_structured(&text, path)
}

pub fn parse_structured<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, StoreError> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let field = err.path().to_string();
        let inner = err.into_inner();
        StoreError::Parse {
            path: path.to_path_buf(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })
}

fn csv_err(path: &Path, err: impl std::fmt::Display) -> StoreError {
    StoreError::Csv {
        path: path.to_path_buf(),
        message: err.to_string(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRow {
    id: String,
    label: String,
    kind: String,
    level: String,
    category: String,
    description: String,
    record_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelationshipRow {
    src: String,
    dst: String,
    kind: String,
}

/// Writes `nodes.csv` and `relationships.csv` into `dir` (created if needed).
pub fn export_property_graph(
    graph: &KnowledgeGraph,
    dir: impl AsRef<Path>,
) -> Result<(), StoreError> {
    let dir = dir.as_ref();
    if !graph.is_validated() {
        return Err(StoreError::Unvalidated);
    }
    fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;

    let nodes_path = dir.join(NODES_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    // Header is written explicitly so an empty graph still gets one.
    w.write_record([
        "id",
        "label",
        "kind",
        "level",
        "category",
        "description",
        "record_id",
    ])
    .map_err(|e| csv_err(&nodes_path, e))?;
    for s in graph.system_nodes() {
        w.write_record([
            s.id.as_str(),
            &s.label,
            "System",
            s.level().as_str(),
            "",
            &s.description,
            "",
        ])
        .map_err(|e| csv_err(&nodes_path, e))?;
    }
    for f in graph.failure_nodes() {
        w.write_record([
            f.id.as_str(),
            &f.label,
            "Failure",
            "",
            f.category.as_str(),
            &f.description,
            &f.record_id,
        ])
        .map_err(|e| csv_err(&nodes_path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(&nodes_path, e))?;
    write_atomic(&nodes_path, &bytes)?;

    let rel_path = dir.join(RELATIONSHIPS_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["src", "dst", "kind"])
        .map_err(|e| csv_err(&rel_path, e))?;
    for e in graph.edges() {
        w.write_record([e.src.as_str(), e.dst.as_str(), e.kind.as_str()])
            .map_err(|err| csv_err(&rel_path, err))?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(&rel_path, e))?;
    write_atomic(&rel_path, &bytes)
}

/// Reads an export produced by [`export_property_graph`] back into a graph.
/// Record author/date are not part of the tabular export and come back empty.
pub fn import_property_graph(dir: impl AsRef<Path>) -> Result<KnowledgeGraph, StoreError> {
    let dir = dir.as_ref();
    let nodes_path = dir.join(NODES_FILE);
    let rel_path = dir.join(RELATIONSHIPS_FILE);
    let mut graph = KnowledgeGraph::new();
    let graph_err = |path: &Path, source| StoreError::Graph {
        path: path.to_path_buf(),
        source,
    };

    let mut reader = csv::Reader::from_path(&nodes_path).map_err(|e| csv_err(&nodes_path, e))?;
    for row in reader.deserialize::<NodeRow>() {
        let row = row.map_err(|e| csv_err(&nodes_path, e))?;
        match row.kind.as_str() {
            "System" => {
                let level: Level = row.level.parse().map_err(|e| csv_err(&nodes_path, e))?;
                let node =
                    SystemNode::new(row.id, row.label, level).with_description(row.description);
                graph
                    .add_system_node(node)
                    .map_err(|e| graph_err(&nodes_path, e))?;
            }
            "Failure" => {
                let category: FailureCategory =
                    row.category.parse().map_err(|e| csv_err(&nodes_path, e))?;
                if !row.record_id.is_empty() && graph.record(&row.record_id).is_none() {
                    graph.upsert_record(RecordInfo {
                        record_id: row.record_id.clone(),
                        author: String::new(),
                        date: String::new(),
                    });
                }
                let node = FailureNode {
                    id: NodeId::new(row.id),
                    label: row.label,
                    category,
                    description: row.description,
                    record_id: row.record_id,
                };
                graph
                    .add_failure_node(node)
                    .map_err(|e| graph_err(&nodes_path, e))?;
            }
            other => return Err(csv_err(&nodes_path, format!("unknown node kind `{other}`"))),
        }
    }

    let mut reader = csv::Reader::from_path(&rel_path).map_err(|e| csv_err(&rel_path, e))?;
    for row in reader.deserialize::<RelationshipRow>() {
        let row = row.map_err(|e| csv_err(&rel_path, e))?;
        let kind: EdgeKind = row
            .kind
            .parse()
            .map_err(|e: String| csv_err(&rel_path, e))?;
        graph.insert_edge_unchecked(Edge::new(kind, row.src, row.dst));
    }
    let report = graph.validate_graph();
    if !report.is_empty() {
        return Err(StoreError::Invalid {
            path: dir.to_path_buf(),
            report,
        });
    }
    Ok(graph)
}

fn cypher_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

/// Cypher statements, one per line: system nodes, failure nodes, then
/// relationships, each in canonical order.
pub fn graph_script(graph: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for s in graph.system_nodes() {
        out.push_str(&format!(
            "CREATE (:System:{} {{id: {}, label: {}, level: {}, description: {}}});\n",
            s.level(),
            cypher_str(s.id.as_str()),
            cypher_str(&s.label),
            cypher_str(s.level().as_str()),
            cypher_str(&s.description),
        ));
    }
    for f in graph.failure_nodes() {
        out.push_str(&format!(
            "CREATE (:Failure {{id: {}, label: {}, category: {}, description: {}, record_id: {}}});\n",
            cypher_str(f.id.as_str()),
            cypher_str(&f.label),
            cypher_str(f.category.as_str()),
            cypher_str(&f.description),
            cypher_str(&f.record_id),
        ));
    }
    for e in graph.edges() {
        out.push_str(&format!(
            "MATCH (a {{id: {}}}), (b {{id: {}}}) CREATE (a)-[:{}]->(b);\n",
            cypher_str(e.src.as_str()),
            cypher_str(e.dst.as_str()),
            e.kind,
        ));
    }
    out
}

pub fn export_graph_script(
    graph: &KnowledgeGraph,
    path: impl AsRef<Path>,
) -> Result<(), StoreError> {
    if !graph.is_validated() {
        return Err(StoreError::Unvalidated);
    }
    write_atomic(path.as_ref(), graph_script(graph).as_bytes())
}
