//! Diagnostic knowledge ontology: the five-level FBS hierarchy, failure nodes,
//! the four edge kinds, and the structural rules tying them together.
//!
//! `HasCause` is stored effect -> cause; the has-effect direction is only ever
//! computed ([`KnowledgeGraph::effects_of`]).

mod graph;
mod level;
mod types;
mod validate;
mod view;

pub use graph::{GraphError, KnowledgeGraph, NodeRef};
pub use level::{level_rank, Level, ParseLevelError};
pub use types::{
    Edge, EdgeKind, EmptyCategory, FailureCategory, FailureNode, GraphMetadata, NodeId, RecordInfo,
    SystemNode,
};
pub use validate::{ValidationReport, Violation, ViolationCode};
pub use view::GraphView;
