//! Example data shipped with the library: a six-process LEGO car roof line,
//! its maintenance-record corpus and an evaluation suite with two assumed
//! failures.

use crate::eval::EvalSuite;
use crate::ingest::{self, IngestError, ModelSpec, RecordSpec};
use crate::ontology::KnowledgeGraph;

pub const LINE_MODEL_JSON: &str = include_str!("../data/lego_line_model.json");
pub const LINE_RECORDS_JSON: &str = include_str!("../data/lego_line_records.json");
pub const LINE_SUITE_JSON: &str = include_str!("../data/lego_line_suite.json");

pub fn line_model() -> ModelSpec {
    serde_json::from_str(LINE_MODEL_JSON).expect("bundled model parses")
}

pub fn line_records() -> Vec<RecordSpec> {
    serde_json::from_str(LINE_RECORDS_JSON).expect("bundled records parse")
}

pub fn line_suite() -> EvalSuite {
    serde_json::from_str(LINE_SUITE_JSON).expect("bundled suite parses")
}

/// The line model alone, validated.
pub fn line_model_graph() -> Result<KnowledgeGraph, IngestError> {
    ingest::build_fbs_model(&line_model())
}

/// The line model with every bundled record stored.
pub fn line_graph() -> Result<KnowledgeGraph, IngestError> {
    let mut g = line_model_graph()?;
    for r in line_records() {
        ingest::add_maintenance_record(&mut g, &r)?;
    }
    Ok(g)
}
