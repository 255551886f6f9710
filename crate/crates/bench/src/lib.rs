//! Shared fixtures for the pipeline benchmarks.

use fbsdiag::eval::{gen_synthetic_line, SynthParams};
use fbsdiag::{bundled, EvalSuite, KnowledgeGraph};

/// The bundled production line with its full record corpus.
pub fn line_graph() -> KnowledgeGraph {
    bundled::line_graph().expect("bundled graph loads")
}

/// A synthetic line sized by `processes`, with its query suite.
pub fn synthetic(processes: usize, drift: f64) -> (KnowledgeGraph, EvalSuite) {
    let data = gen_synthetic_line(&SynthParams {
        processes,
        drift,
        seed: 42,
        ..Default::default()
    })
    .expect("valid params");
    let graph = data.build_graph().expect("synthetic graph builds");
    (graph, data.suite)
}
