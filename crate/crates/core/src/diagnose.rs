//! Query -> chunk retrieval -> candidate causes, ranked.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chunker::{
    causal_depths, effect_roots, generate_chunks, Chunk, ChunkMethod, ChunkOptions,
};
use crate::embed::{EmbedError, EmbedderConfig, StoredIndex, VectorIndex};
use crate::eval::normalize_label;
use crate::ontology::{GraphView, KnowledgeGraph, Level, NodeId};
use crate::store::{self, StoreError};

pub const DEFAULT_K: usize = 10;
pub const DEPTH_DISCOUNT: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisQuery {
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attach_hint: Option<NodeId>,
    pub method: ChunkMethod,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Every candidate inherits its chunk's cosine score.
    #[default]
    ChunkScore,
    /// Chunk score times `0.9^depth`.
    DepthDiscounted,
}

impl std::str::FromStr for Scoring {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "chunk_score" | "plain" => Ok(Scoring::ChunkScore),
            "depth_discounted" => Ok(Scoring::DepthDiscounted),
            other => Err(format!(
                "unknown scoring `{other}` (expected chunk_score or depth_discounted)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseOptions {
    /// Chunks retrieved per query.
    pub k: usize,
    /// Collapse candidates with equal normalized labels, keeping the first.
    pub dedup: bool,
    pub scoring: Scoring,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            k: DEFAULT_K,
            dedup: false,
            scoring: Scoring::ChunkScore,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCause {
    pub rank: usize,
    pub label: String,
    pub failure_id: NodeId,
    pub score: f64,
    /// Causal depth below the chunk's anchor or record roots.
    pub depth: usize,
    /// Retrieved chunks that produced this candidate, in rank order.
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCauseList {
    pub method: ChunkMethod,
    pub causes: Vec<RankedCause>,
    /// Retrieved chunk ids and scores, best first.
    pub retrieved: Vec<(String, f64)>,
}

impl RankedCauseList {
    pub fn labels(&self) -> Vec<&str> {
        self.causes.iter().map(|c| c.label.as_str()).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DiagnoseError {
    #[error("the index holds no chunks")]
    EmptyIndex,
    #[error("the proposed method needs a hierarchy level")]
    LevelMissing,
    #[error("n must be at least 1")]
    InvalidN,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index was built for {index}, query asks for {query}")]
    IndexMismatch { index: String, query: String },
    #[error("attach hint `{0}` is not a system node")]
    UnknownAttachHint(NodeId),
    #[error("chunk `{chunk}` references `{member}`, which is not in the graph")]
    UnknownMember { chunk: String, member: NodeId },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl DiagnoseError {
    pub fn code(&self) -> &'static str {
        match self {
            DiagnoseError::EmptyIndex => "empty-index",
            DiagnoseError::LevelMissing => "level-missing",
            DiagnoseError::InvalidN => "invalid-n",
            DiagnoseError::InvalidK => "invalid-k",
            DiagnoseError::IndexMismatch { .. } => "index-mismatch",
            DiagnoseError::UnknownAttachHint(_) => "unknown-attach-hint",
            DiagnoseError::UnknownMember { .. } => "unknown-member",
            DiagnoseError::Embed(e) => e.code(),
            DiagnoseError::Store(e) => e.code(),
        }
    }
}

/// Candidate causes of one chunk with their depths, ordered by (depth, id).
///
/// Proposed chunks: every member except the anchor, depth measured from the
/// anchor. Baseline chunks: every member that is not an effect root, depth
/// measured from the nearest root.
pub fn extract_causes_with_depth(
    chunk: &Chunk,
    graph: &KnowledgeGraph,
) -> Result<Vec<(NodeId, usize)>, DiagnoseError> {
    extract_with_view(chunk, &GraphView::new(graph))
}

pub fn extract_causes_from_chunk(
    chunk: &Chunk,
    graph: &KnowledgeGraph,
) -> Result<Vec<NodeId>, DiagnoseError> {
    Ok(extract_causes_with_depth(chunk, graph)?
        .into_iter()
        .map(|(id, _)| id)
        .collect())
}

fn extract_with_view(
    chunk: &Chunk,
    view: &GraphView<'_>,
) -> Result<Vec<(NodeId, usize)>, DiagnoseError> {
    for m in &chunk.member_failure_ids {
        if view.failure(m).is_none() {
            return Err(DiagnoseError::UnknownMember {
                chunk: chunk.chunk_id.clone(),
                member: m.clone(),
            });
        }
    }
    let members: BTreeSet<&NodeId> = chunk.member_failure_ids.iter().collect();
    let roots: Vec<&NodeId> = match chunk.method {
        ChunkMethod::Proposed => members
            .get(&chunk.anchor_failure_id)
            .into_iter()
            .copied()
            .collect(),
        ChunkMethod::Baseline => effect_roots(view, &members),
    };
    let depths = causal_depths(view, &members, &roots);
    let mut out: Vec<(NodeId, usize)> = depths
        .into_iter()
        .filter(|(_, d)| *d > 0)
        .map(|(id, d)| (id.clone(), d))
        .collect();
    out.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
    Ok(out)
}

/// Chunks plus their vectors, built for one method (and level).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisIndex {
    pub method: ChunkMethod,
    pub level: Option<Level>,
    pub chunk_options: ChunkOptions,
    chunks: Vec<Chunk>,
    by_id: BTreeMap<String, usize>,
    vectors: VectorIndex,
}

#[derive(Serialize, Deserialize)]
struct StoredDiagnosisIndex {
    method: ChunkMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level: Option<Level>,
    #[serde(default)]
    chunk_options: ChunkOptions,
    chunks: Vec<Chunk>,
    index: StoredIndex,
}

impl DiagnosisIndex {
    pub fn build(
        graph: &KnowledgeGraph,
        method: ChunkMethod,
        level: Option<Level>,
        chunk_options: ChunkOptions,
        embedder: &EmbedderConfig,
    ) -> Result<Self, DiagnoseError> {
        let chunks = generate_chunks(graph, method, level, chunk_options)
            .map_err(|_| DiagnoseError::LevelMissing)?;
        let level = if method == ChunkMethod::Proposed {
            level
        } else {
            None
        };
        Self::from_chunks(method, level, chunk_options, chunks, embedder)
    }

    pub fn from_chunks(
        method: ChunkMethod,
        level: Option<Level>,
        chunk_options: ChunkOptions,
        chunks: Vec<Chunk>,
        embedder: &EmbedderConfig,
    ) -> Result<Self, DiagnoseError> {
        let vectors = VectorIndex::build(
            chunks
                .iter()
                .map(|c| (c.chunk_id.as_str(), c.text.as_str())),
            embedder,
        )?;
        let by_id = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();
        Ok(DiagnosisIndex {
            method,
            level,
            chunk_options,
            chunks,
            by_id,
            vectors,
        })
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.by_id.get(id).map(|i| &self.chunks[*i])
    }

    pub fn vectors(&self) -> &VectorIndex {
        &self.vectors
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn to_json(&self) -> String {
        let stored = StoredDiagnosisIndex {
            method: self.method,
            level: self.level,
            chunk_options: self.chunk_options,
            chunks: self.chunks.clone(),
            index: self.vectors.to_stored(),
        };
        let mut s = serde_json::to_string(&stored).expect("index serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DiagnoseError> {
        Ok(store::write_atomic(
            path.as_ref(),
            self.to_json().as_bytes(),
        )?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DiagnoseError> {
        let stored: StoredDiagnosisIndex = store::read_structured(path.as_ref())?;
        let vectors = VectorIndex::from_stored(stored.index)?;
        let ids: Vec<&str> = stored.chunks.iter().map(|c| c.chunk_id.as_str()).collect();
        if ids != vectors.ids().iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(EmbedError::Config("index rows do not match its chunks".into()).into());
        }
        let by_id = stored
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();
        Ok(DiagnosisIndex {
            method: stored.method,
            level: stored.level,
            chunk_options: stored.chunk_options,
            chunks: stored.chunks,
            by_id,
            vectors,
        })
    }
}

fn check_query(
    index: &DiagnosisIndex,
    query: &DiagnosisQuery,
    options: &DiagnoseOptions,
) -> Result<(), DiagnoseError> {
    if query.n == 0 {
        return Err(DiagnoseError::InvalidN);
    }
    if options.k == 0 {
        return Err(DiagnoseError::InvalidK);
    }
    if query.method == ChunkMethod::Proposed && query.level.is_none() {
        return Err(DiagnoseError::LevelMissing);
    }
    let describe = |m: ChunkMethod, l: Option<Level>| match (m, l) {
        (ChunkMethod::Proposed, Some(l)) => format!("proposed at {l}"),
        (m, _) => m.to_string(),
    };
    let level_ok = query.method == ChunkMethod::Baseline || index.level == query.level;
    if index.method != query.method || !level_ok {
        return Err(DiagnoseError::IndexMismatch {
            index: describe(index.method, index.level),
            query: describe(query.method, query.level),
        });
    }
    if index.is_empty() {
        return Err(DiagnoseError::EmptyIndex);
    }
    Ok(())
}

/// Ranks candidate causes for a query.
///
/// Candidates from the top `k` chunks are concatenated in chunk rank order,
/// each chunk contributing its causes by (depth, id). Each candidate scores
/// as its chunk (optionally depth-discounted), then the list is stably sorted
/// by score and cut to `n`. Repeated labels are kept unless `dedup` is set.
pub fn infer_causes(
    graph: &KnowledgeGraph,
    index: &DiagnosisIndex,
    query: &DiagnosisQuery,
    options: &DiagnoseOptions,
) -> Result<RankedCauseList, DiagnoseError> {
    check_query(index, query, options)?;
    let view = GraphView::new(graph);

    let allowed: Option<BTreeSet<&NodeId>> = match (&query.attach_hint, query.method) {
        (Some(hint), ChunkMethod::Proposed) => {
            let root = graph
                .system_node(hint)
                .ok_or_else(|| DiagnoseError::UnknownAttachHint(hint.clone()))?;
            Some(view.subtree(&root.id))
        }
        _ => None,
    };
    let keep = |chunk_id: &str| match &allowed {
        None => true,
        Some(subtree) => index
            .chunk(chunk_id)
            .and_then(|c| view.attachment(&c.anchor_failure_id))
            .is_some_and(|s| subtree.contains(&s.id)),
    };

    let q = index.vectors.embed_query(&query.description)?;
    let hits = index.vectors.top_k_filtered(&q, options.k, keep)?;

    let mut candidates: Vec<RankedCause> = Vec::new();
    for hit in &hits {
        let chunk = index
            .chunk(&hit.chunk_id)
            .expect("index rows map to chunks");
        for (id, depth) in extract_with_view(chunk, &view)? {
            let score = match options.scoring {
                Scoring::ChunkScore => hit.score,
                Scoring::DepthDiscounted => hit.score * DEPTH_DISCOUNT.powi(depth as i32),
            };
            let label = view
                .failure(&id)
                .expect("checked during extraction")
                .label
                .clone();
            candidates.push(RankedCause {
                rank: 0,
                label,
                failure_id: id,
                score,
                depth,
                provenance: vec![hit.chunk_id.clone()],
            });
        }
    }
    // Stable: equal scores keep chunk-rank then depth order.
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));

    if options.dedup {
        let mut first: BTreeMap<String, usize> = BTreeMap::new();
        let mut kept: Vec<RankedCause> = Vec::new();
        for c in candidates {
            match first.get(&normalize_label(&c.label)) {
                Some(&i) => {
                    for p in c.provenance {
                        if !kept[i].provenance.contains(&p) {
                            kept[i].provenance.push(p);
                        }
                    }
                }
                None => {
                    first.insert(normalize_label(&c.label), kept.len());
                    kept.push(c);
                }
            }
        }
        candidates = kept;
    }
    candidates.truncate(query.n);
    for (i, c) in candidates.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    Ok(RankedCauseList {
        method: query.method,
        causes: candidates,
        retrieved: hits.into_iter().map(|h| (h.chunk_id, h.score)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::generate_chunks_proposed;
    use crate::ontology::{Edge, FailureCategory, FailureNode, SystemNode};
    use std::collections::VecDeque;

    fn graph_with_causes(pairs: &[(&str, &str)], ids: &[&str]) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        g.add_system_node(SystemNode::new("L", "line", Level::LineFunction))
            .unwrap();
        g.add_system_node(SystemNode::new(
            "P",
            "assemble roof",
            Level::ProcessFunction,
        ))
        .unwrap();
        g.add_edge(Edge::has_part("L", "P")).unwrap();
        for id in ids {
            g.add_failure_node(FailureNode {
                id: (*id).into(),
                label: format!("{id} label"),
                category: FailureCategory::motion(),
                description: String::new(),
                record_id: "r1".into(),
            })
            .unwrap();
            g.add_edge(Edge::has_failure("P", *id)).unwrap();
        }
        for (e, c) in pairs {
            g.add_edge(Edge::has_cause(*e, *c)).unwrap();
        }
        assert!(g.validate_graph().is_empty());
        g
    }

    fn anchor_chunk(g: &KnowledgeGraph, anchor: &str) -> Chunk {
        generate_chunks_proposed(g, Level::ProcessFunction, ChunkOptions::default())
            .into_iter()
            .find(|c| c.anchor_failure_id.as_str() == anchor)
            .unwrap()
    }

    #[test]
    fn lone_failure_has_no_causes() {
        let g = graph_with_causes(&[], &["x"]);
        assert!(extract_causes_from_chunk(&anchor_chunk(&g, "x"), &g)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn chain_in_depth_order() {
        let g = graph_with_causes(&[("anchor", "c1"), ("c1", "c2")], &["anchor", "c2", "c1"]);
        let got = extract_causes_from_chunk(&anchor_chunk(&g, "anchor"), &g).unwrap();
        assert_eq!(got, vec![NodeId::from("c1"), NodeId::from("c2")]);
    }

    #[test]
    fn diamond_matches_bfs_oracle() {
        let pairs = [("anchor", "b"), ("anchor", "a"), ("a", "c"), ("b", "c")];
        let g = graph_with_causes(&pairs, &["anchor", "a", "b", "c"]);
        // Oracle: plain BFS over the pair list.
        let mut depth: BTreeMap<&str, usize> = BTreeMap::from([("anchor", 0)]);
        let mut queue = VecDeque::from(["anchor"]);
        while let Some(cur) = queue.pop_front() {
            for (e, c) in pairs {
                if e == cur && !depth.contains_key(c) {
                    depth.insert(c, depth[cur] + 1);
                    queue.push_back(c);
                }
            }
        }
        let mut expected: Vec<(&str, usize)> =
            depth.into_iter().filter(|(k, _)| *k != "anchor").collect();
        expected.sort_by_key(|(k, d)| (*d, *k));
        let got = extract_causes_with_depth(&anchor_chunk(&g, "anchor"), &g).unwrap();
        let got: Vec<(&str, usize)> = got.iter().map(|(id, d)| (id.as_str(), *d)).collect();
        assert_eq!(got, expected);
        assert_eq!(got.iter().map(|x| x.0).collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn unknown_member_is_an_error() {
        let g = graph_with_causes(&[], &["x"]);
        let mut chunk = anchor_chunk(&g, "x");
        chunk.member_failure_ids.push("ghost".into());
        assert_eq!(
            extract_causes_from_chunk(&chunk, &g).unwrap_err().code(),
            "unknown-member"
        );
    }

    #[test]
    fn query_validation() {
        let g = graph_with_causes(&[("x", "y")], &["x", "y"]);
        let idx = DiagnosisIndex::build(
            &g,
            ChunkMethod::Proposed,
            Some(Level::ProcessFunction),
            ChunkOptions::default(),
            &EmbedderConfig::local(),
        )
        .unwrap();
        let mut q = DiagnosisQuery {
            description: "x".into(),
            level: None,
            attach_hint: None,
            method: ChunkMethod::Proposed,
            n: 1,
        };
        let opts = DiagnoseOptions::default();
        assert_eq!(
            infer_causes(&g, &idx, &q, &opts).unwrap_err().code(),
            "level-missing"
        );
        q.level = Some(Level::Behavior);
        assert_eq!(
            infer_causes(&g, &idx, &q, &opts).unwrap_err().code(),
            "index-mismatch"
        );
        q.level = Some(Level::ProcessFunction);
        q.n = 0;
        assert_eq!(
            infer_causes(&g, &idx, &q, &opts).unwrap_err().code(),
            "invalid-n"
        );
        q.n = 1;
        q.attach_hint = Some("nowhere".into());
        assert_eq!(
            infer_causes(&g, &idx, &q, &opts).unwrap_err().code(),
            "unknown-attach-hint"
        );

        let empty = DiagnosisIndex::build(
            &g,
            ChunkMethod::Proposed,
            Some(Level::Structure),
            ChunkOptions::default(),
            &EmbedderConfig::local(),
        )
        .unwrap();
        q.level = Some(Level::Structure);
        q.attach_hint = None;
        assert_eq!(
            infer_causes(&g, &empty, &q, &opts).unwrap_err().code(),
            "empty-index"
        );
    }

    #[test]
    fn save_load_round_trip() {
        let g = graph_with_causes(&[("x", "y")], &["x", "y"]);
        let idx = DiagnosisIndex::build(
            &g,
            ChunkMethod::Baseline,
            None,
            ChunkOptions::default(),
            &EmbedderConfig::local(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("baseline.idx.json");
        idx.save(&path).unwrap();
        assert_eq!(DiagnosisIndex::load(&path).unwrap(), idx);
    }
}
