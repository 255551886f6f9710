//! Turns knowledge-graph neighbourhoods into text chunks for retrieval.
//!
//! Two methods:
//! * **proposed** anchors on every failure attached at one hierarchy level and
//!   gathers its HasCause closure restricted to that level and below, plus the
//!   system nodes those failures are attached to;
//! * **baseline** makes one chunk per maintenance record from the failure
//!   descriptions and causal links alone, with no system information.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ontology::{GraphView, KnowledgeGraph, Level, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkMethod {
    Proposed,
    Baseline,
}

impl ChunkMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ChunkMethod::Proposed => "proposed",
            ChunkMethod::Baseline => "baseline",
        }
    }
}

impl fmt::Display for ChunkMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChunkMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" => Ok(ChunkMethod::Proposed),
            "baseline" => Ok(ChunkMethod::Baseline),
            other => Err(format!(
                "unknown method `{other}` (expected proposed or baseline)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub method: ChunkMethod,
    pub anchor_failure_id: NodeId,
    /// Attachment level of the anchor; `None` for baseline chunks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    /// Set for baseline chunks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    pub member_failure_ids: Vec<NodeId>,
    pub member_system_ids: Vec<NodeId>,
    pub text: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkOptions {
    /// Also include every HasPart ancestor of each attached system node.
    #[serde(default)]
    pub include_ancestor_path: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChunkError {
    #[error("chunk has no member failures")]
    Empty,
    #[error("chunk member `{0}` does not resolve in the graph")]
    UnknownMember(NodeId),
}

impl ChunkError {
    pub fn code(&self) -> &'static str {
        match self {
            ChunkError::Empty => "empty-member",
            ChunkError::UnknownMember(_) => "unknown-member",
        }
    }
}

/// Member set handed to [`render_chunk`]. Order of the vectors is irrelevant;
/// rendering applies the canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkMembers {
    pub method: ChunkMethod,
    /// Depth origin for proposed chunks. When absent, depths start from the
    /// member failures that no other member lists as a cause.
    pub anchor: Option<NodeId>,
    pub failures: Vec<NodeId>,
    pub systems: Vec<NodeId>,
}

/// BFS depth of every member along HasCause edges whose both ends are members.
/// Members not reachable from the roots are absent from the map.
pub fn causal_depths<'a>(
    view: &GraphView<'_>,
    members: &BTreeSet<&'a NodeId>,
    roots: &[&'a NodeId],
) -> BTreeMap<&'a NodeId, usize> {
    let mut depth = BTreeMap::new();
    let mut queue = VecDeque::new();
    for &r in roots {
        if members.contains(r) && !depth.contains_key(r) {
            depth.insert(r, 0);
            queue.push_back(r);
        }
    }
    while let Some(cur) = queue.pop_front() {
        let d = depth[cur];
        for &next in view.causes(cur) {
            if let Some(&m) = members.get(next) {
                if !depth.contains_key(m) {
                    depth.insert(m, d + 1);
                    queue.push_back(m);
                }
            }
        }
    }
    depth
}

/// Member failures no other member names as a cause (the effect roots).
pub fn effect_roots<'a>(view: &GraphView<'_>, members: &BTreeSet<&'a NodeId>) -> Vec<&'a NodeId> {
    members
        .iter()
        .copied()
        .filter(|m| !view.effects(m).iter().any(|e| members.contains(*e)))
        .collect()
}

/// Canonical proposed order: (causal depth, id), unreachable members last.
fn depth_order<'a>(
    view: &GraphView<'_>,
    members: &BTreeSet<&'a NodeId>,
    anchor: Option<&'a NodeId>,
) -> Vec<&'a NodeId> {
    let roots = match anchor {
        Some(a) => vec![a],
        None => effect_roots(view, members),
    };
    let depth = causal_depths(view, members, &roots);
    let mut ordered: Vec<&NodeId> = members.iter().copied().collect();
    ordered.sort_by_key(|m| (depth.get(m).copied().unwrap_or(usize::MAX), *m));
    ordered
}

/// Effects before causes; ties broken by smallest id (Kahn with a min-heap).
/// Members on a cycle, which a validated graph cannot have, are appended by id.
pub fn topological_order<'a>(
    view: &GraphView<'_>,
    members: &BTreeSet<&'a NodeId>,
) -> Vec<&'a NodeId> {
    let mut indegree: BTreeMap<&NodeId, usize> = members.iter().map(|m| (*m, 0)).collect();
    for &m in members {
        for &c in view.causes(m) {
            if let Some(d) = indegree.get_mut(c) {
                *d += 1;
            }
        }
    }
    let mut heap: BinaryHeap<Reverse<&NodeId>> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(m, _)| Reverse(*m))
        .collect();
    let mut out = Vec::with_capacity(members.len());
    while let Some(Reverse(cur)) = heap.pop() {
        out.push(cur);
        for &c in view.causes(cur) {
            if let Some(&m) = members.get(c) {
                let d = indegree.get_mut(m).expect("indegree tracks every member");
                *d -= 1;
                if *d == 0 {
                    heap.push(Reverse(m));
                }
            }
        }
    }
    if out.len() < members.len() {
        let placed: BTreeSet<&NodeId> = out.iter().copied().collect();
        out.extend(members.iter().copied().filter(|m| !placed.contains(*m)));
    }
    out
}

fn failure_line(
    view: &GraphView<'_>,
    id: &NodeId,
    with_location: bool,
) -> Result<String, ChunkError> {
    let f = view
        .failure(id)
        .ok_or_else(|| ChunkError::UnknownMember(id.clone()))?;
    let mut line = format!("FAILURE({}) {}", f.category, f.label);
    if !f.description.is_empty() {
        line.push_str(" — ");
        line.push_str(&f.description);
    }
    if with_location {
        if let Some(at) = view.attachment(id) {
            line.push_str(&format!(" [at: {}]", at.label));
        }
    }
    Ok(line)
}

/// Deterministic text of a chunk. Pure function of the member subgraph.
pub fn render_chunk(graph: &KnowledgeGraph, members: &ChunkMembers) -> Result<String, ChunkError> {
    render_with_view(&GraphView::new(graph), members)
}

pub(crate) fn render_with_view(
    view: &GraphView<'_>,
    members: &ChunkMembers,
) -> Result<String, ChunkError> {
    if members.failures.is_empty() {
        return Err(ChunkError::Empty);
    }
    let failure_set: BTreeSet<&NodeId> = members.failures.iter().collect();
    for id in &failure_set {
        if view.failure(id).is_none() {
            return Err(ChunkError::UnknownMember((*id).clone()));
        }
    }
    let mut lines = Vec::new();
    let ordered = match members.method {
        ChunkMethod::Proposed => {
            let mut systems = Vec::new();
            for id in members.systems.iter().collect::<BTreeSet<_>>() {
                let s = view
                    .system(id)
                    .ok_or_else(|| ChunkError::UnknownMember(id.clone()))?;
                systems.push(s);
            }
            systems.sort_by(|a, b| (a.level(), &a.id).cmp(&(b.level(), &b.id)));
            for s in systems {
                lines.push(format!("{}: {}", s.level(), s.label));
            }
            let anchor = members
                .anchor
                .as_ref()
                .and_then(|a| failure_set.get(a).copied());
            depth_order(view, &failure_set, anchor)
        }
        ChunkMethod::Baseline => topological_order(view, &failure_set),
    };
    let with_location = members.method == ChunkMethod::Proposed;
    for id in &ordered {
        lines.push(failure_line(view, id, with_location)?);
    }
    let position: BTreeMap<&NodeId, usize> =
        ordered.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    for effect in &ordered {
        let effect_label = &view.failure(effect).expect("checked above").label;
        let mut causes: Vec<&NodeId> = view
            .causes(effect)
            .iter()
            .copied()
            .filter(|c| failure_set.contains(c))
            .collect();
        causes.sort_by_key(|c| position[c]);
        for cause in causes {
            let cause_label = &view.failure(cause).expect("checked above").label;
            lines.push(match members.method {
                ChunkMethod::Proposed => format!("CAUSAL: {effect_label} <- {cause_label}"),
                ChunkMethod::Baseline => format!("CAUSAL: {effect_label} caused by {cause_label}"),
            });
        }
    }
    Ok(lines.join("\n"))
}

/// HasCause closure from `anchor` that never enters (or passes through) a
/// failure attached above `level`.
pub fn level_restricted_closure<'g>(
    view: &GraphView<'g>,
    anchor: &'g NodeId,
    level: Level,
) -> BTreeSet<&'g NodeId> {
    let mut seen = BTreeSet::from([anchor]);
    let mut queue = VecDeque::from([anchor]);
    while let Some(cur) = queue.pop_front() {
        for &next in view.causes(cur) {
            let admitted = view
                .attachment_level(next)
                .is_some_and(|l| l.rank() >= level.rank());
            if admitted && seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    seen
}

/// One chunk per failure attached at exactly `level`, ordered by anchor id.
pub fn generate_chunks_proposed(
    graph: &KnowledgeGraph,
    level: Level,
    options: ChunkOptions,
) -> Vec<Chunk> {
    let view = GraphView::new(graph);
    let mut chunks = Vec::new();
    for anchor in graph.failure_nodes() {
        if view.attachment_level(&anchor.id) != Some(level) {
            continue;
        }
        let members = level_restricted_closure(&view, &anchor.id, level);
        let failures = depth_order(&view, &members, Some(&anchor.id));
        let mut systems: BTreeSet<&NodeId> = BTreeSet::new();
        for f in &failures {
            if let Some(s) = view.attachment(f) {
                systems.insert(&s.id);
                if options.include_ancestor_path {
                    systems.extend(view.ancestors(&s.id));
                }
            }
        }
        let mut systems: Vec<&NodeId> = systems.into_iter().collect();
        systems.sort_by_key(|id| (view.system(id).map(|s| s.level()), *id));
        let members = ChunkMembers {
            method: ChunkMethod::Proposed,
            anchor: Some(anchor.id.clone()),
            failures: failures.iter().map(|f| (*f).clone()).collect(),
            systems: systems.iter().map(|s| (*s).clone()).collect(),
        };
        let text = render_with_view(&view, &members).expect("members resolve by construction");
        chunks.push(Chunk {
            chunk_id: format!("proposed:{}:{}", level, anchor.id),
            method: ChunkMethod::Proposed,
            anchor_failure_id: anchor.id.clone(),
            level: Some(level),
            record_id: None,
            member_failure_ids: members.failures,
            member_system_ids: members.systems,
            text,
        });
    }
    chunks
}

/// One chunk per maintenance record, ordered by record id.
pub fn generate_chunks_baseline(graph: &KnowledgeGraph) -> Vec<Chunk> {
    let view = GraphView::new(graph);
    let mut by_record: BTreeMap<&str, BTreeSet<&NodeId>> = BTreeMap::new();
    for f in graph.failure_nodes() {
        by_record
            .entry(f.record_id.as_str())
            .or_default()
            .insert(&f.id);
    }
    by_record
        .into_iter()
        .map(|(record_id, members)| {
            let ordered = topological_order(&view, &members);
            let chunk_members = ChunkMembers {
                method: ChunkMethod::Baseline,
                anchor: None,
                failures: ordered.iter().map(|f| (*f).clone()).collect(),
                systems: Vec::new(),
            };
            let text =
                render_with_view(&view, &chunk_members).expect("members resolve by construction");
            Chunk {
                chunk_id: format!("baseline:{record_id}"),
                method: ChunkMethod::Baseline,
                anchor_failure_id: ordered[0].clone(),
                level: None,
                record_id: Some(record_id.to_string()),
                member_failure_ids: chunk_members.failures,
                member_system_ids: Vec::new(),
                text,
            }
        })
        .collect()
}

pub fn generate_chunks(
    graph: &KnowledgeGraph,
    method: ChunkMethod,
    level: Option<Level>,
    options: ChunkOptions,
) -> Result<Vec<Chunk>, MissingLevel> {
    match method {
        ChunkMethod::Baseline => Ok(generate_chunks_baseline(graph)),
        ChunkMethod::Proposed => Ok(generate_chunks_proposed(
            graph,
            level.ok_or(MissingLevel)?,
            options,
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("the proposed method needs a hierarchy level")]
pub struct MissingLevel;
