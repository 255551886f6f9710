//! Diagnostic knowledge graphs for production lines.
//!
//! A line is modelled as a five-level function/behavior/structure hierarchy.
//! Maintenance records attach failures to that hierarchy and link them by
//! cause. The graph is then chunked, embedded and searched to propose likely
//! causes for a newly observed failure.

pub mod bundled;
pub mod chunker;
pub mod config;
pub mod diagnose;
pub mod embed;
pub mod eval;
pub mod ingest;
pub mod ontology;
pub mod store;

pub use chunker::{Chunk, ChunkMethod, ChunkOptions};
pub use diagnose::{
    infer_causes, DiagnoseOptions, DiagnosisIndex, DiagnosisQuery, RankedCause, RankedCauseList,
};
pub use embed::{EmbedderConfig, EmbedderKind, VectorIndex};
pub use eval::{EvalResult, EvalSuite, GroundTruth};
pub use ingest::{ModelSpec, RecordSpec};
pub use ontology::{
    Edge, EdgeKind, FailureNode, KnowledgeGraph, Level, NodeId, SystemNode, ValidationReport,
};
