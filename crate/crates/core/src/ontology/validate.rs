use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Edge, EdgeKind, KnowledgeGraph, Level, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    UnknownEndpoint,
    /// Endpoints are the wrong node kind for the edge kind.
    EndpointKind,
    SelfLoop,
    NonAdjacentLevels,
    /// HasPart between two Structure nodes. Kept apart from
    /// `NonAdjacentLevels` so a nesting policy can be enabled later.
    StructureNesting,
    CrossLevelSequence,
    DuplicateEdge,
    MissingAttachment,
    MultipleAttachment,
    CauseCycle,
    OrphanSystemNode,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::UnknownEndpoint => "unknown-endpoint",
            ViolationCode::EndpointKind => "endpoint-kind",
            ViolationCode::SelfLoop => "self-loop",
            ViolationCode::NonAdjacentLevels => "non-adjacent-levels",
            ViolationCode::StructureNesting => "structure-nesting",
            ViolationCode::CrossLevelSequence => "cross-level-sequence",
            ViolationCode::DuplicateEdge => "duplicate-edge",
            ViolationCode::MissingAttachment => "missing-attachment",
            ViolationCode::MultipleAttachment => "multiple-attachment",
            ViolationCode::CauseCycle => "cause-cycle",
            ViolationCode::OrphanSystemNode => "orphan-system-node",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
    /// Offending node ids. For edges: `[src, dst]`; for cycles: the cycle in
    /// HasCause order starting at its smallest id.
    pub nodes: Vec<NodeId>,
}

impl Violation {
    pub fn new(code: ViolationCode, message: impl Into<String>, nodes: Vec<NodeId>) -> Self {
        Violation {
            code,
            message: message.into(),
            nodes,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn with_code(&self, code: ViolationCode) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.code == code)
    }

    /// HasCause cycles found, as node-id lists.
    pub fn cycles(&self) -> Vec<&[NodeId]> {
        self.with_code(ViolationCode::CauseCycle)
            .map(|v| v.nodes.as_slice())
            .collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} violations", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Endpoints must already be known to resolve.
pub(crate) fn check_edge_local(graph: &KnowledgeGraph, edge: &Edge) -> Result<(), Violation> {
    let endpoints = || vec![edge.src.clone(), edge.dst.clone()];
    let src_sys = graph.system_node(&edge.src);
    let dst_sys = graph.system_node(&edge.dst);
    let src_fail = graph.failure_node(&edge.src).is_some();
    let dst_fail = graph.failure_node(&edge.dst).is_some();

    let kinds_ok = match edge.kind {
        EdgeKind::HasPart | EdgeKind::StepAfter => src_sys.is_some() && dst_sys.is_some(),
        EdgeKind::HasFailure => src_sys.is_some() && dst_fail,
        EdgeKind::HasCause => src_fail && dst_fail,
    };
    if !kinds_ok {
        let expected = match edge.kind {
            EdgeKind::HasPart | EdgeKind::StepAfter => "system -> system",
            EdgeKind::HasFailure => "system -> failure",
            EdgeKind::HasCause => "failure -> failure",
        };
        return Err(Violation::new(
            ViolationCode::EndpointKind,
            format!("{edge}: {} requires {expected}", edge.kind),
            endpoints(),
        ));
    }
    if edge.src == edge.dst {
        return Err(Violation::new(
            ViolationCode::SelfLoop,
            format!("{edge}: endpoints must differ"),
            endpoints(),
        ));
    }
    match (edge.kind, src_sys, dst_sys) {
        (EdgeKind::HasPart, Some(s), Some(d)) => {
            let (sl, dl) = (s.level(), d.level());
            if sl == Level::Structure && dl == Level::Structure {
                return Err(Violation::new(
                    ViolationCode::StructureNesting,
                    format!("{edge}: Structure nodes are leaves"),
                    endpoints(),
                ));
            }
            if dl.rank() != sl.rank() + 1 {
                return Err(Violation::new(
                    ViolationCode::NonAdjacentLevels,
                    format!("{edge}: non-adjacent levels {sl} -> {dl}"),
                    endpoints(),
                ));
            }
        }
        (EdgeKind::StepAfter, Some(s), Some(d)) if s.level() != d.level() => {
            return Err(Violation::new(
                ViolationCode::CrossLevelSequence,
                format!(
                    "{edge}: cross-level sequence {} -> {}",
                    s.level(),
                    d.level()
                ),
                endpoints(),
            ));
        }
        _ => {}
    }
    Ok(())
}

pub(crate) fn validate(graph: &KnowledgeGraph) -> ValidationReport {
    let mut violations = Vec::new();

    for edge in graph.edges() {
        let mut missing = false;
        for id in [&edge.src, &edge.dst] {
            if !graph.contains_node(id) {
                missing = true;
                violations.push(Violation::new(
                    ViolationCode::UnknownEndpoint,
                    format!("{edge}: unknown node id `{id}`"),
                    vec![id.clone()],
                ));
            }
        }
        if !missing {
            if let Err(v) = check_edge_local(graph, edge) {
                violations.push(v);
            }
        }
    }

    let mut attachments: BTreeMap<&NodeId, Vec<&NodeId>> =
        graph.failure_nodes().map(|f| (&f.id, Vec::new())).collect();
    for e in graph.edges_of_kind(EdgeKind::HasFailure) {
        if let Some(list) = attachments.get_mut(&e.dst) {
            list.push(&e.src);
        }
    }
    for (failure, systems) in attachments {
        match systems.len() {
            1 => {}
            0 => violations.push(Violation::new(
                ViolationCode::MissingAttachment,
                format!("failure {failure} has no HasFailure attachment"),
                vec![failure.clone()],
            )),
            n => {
                let mut nodes = vec![failure.clone()];
                nodes.extend(systems.into_iter().cloned());
                violations.push(Violation::new(
                    ViolationCode::MultipleAttachment,
                    format!("failure {failure} has {n} HasFailure attachments"),
                    nodes,
                ));
            }
        }
    }

    for cycle in cause_cycles(graph) {
        let rendered: Vec<&str> = cycle.iter().map(NodeId::as_str).collect();
        violations.push(Violation::new(
            ViolationCode::CauseCycle,
            format!("HasCause cycle {}", rendered.join(" -> ")),
            cycle,
        ));
    }

    for orphan in orphan_systems(graph) {
        violations.push(Violation::new(
            ViolationCode::OrphanSystemNode,
            format!("system node {orphan} is unreachable from any LineFunction via HasPart"),
            vec![orphan],
        ));
    }

    ValidationReport { violations }
}

/// One representative cycle per non-trivial strongly connected component of
/// the HasCause digraph (self loops are reported as local violations).
fn cause_cycles(graph: &KnowledgeGraph) -> Vec<Vec<NodeId>> {
    let mut adj: BTreeMap<&NodeId, Vec<&NodeId>> = BTreeMap::new();
    for e in graph.edges_of_kind(EdgeKind::HasCause) {
        if e.src != e.dst {
            adj.entry(&e.src).or_default().push(&e.dst);
            adj.entry(&e.dst).or_default();
        }
    }
    let sccs = tarjan(&adj);
    let mut cycles = Vec::new();
    for scc in sccs.into_iter().filter(|c| c.len() > 1) {
        let members: BTreeSet<&NodeId> = scc.iter().copied().collect();
        let start = *members.iter().next().expect("non-empty component");
        // Shortest path from start back to itself inside the component.
        let mut prev: BTreeMap<&NodeId, &NodeId> = BTreeMap::new();
        let mut queue = VecDeque::from([start]);
        let mut seen: BTreeSet<&NodeId> = BTreeSet::new();
        let mut closing = None;
        'bfs: while let Some(cur) = queue.pop_front() {
            for &next in &adj[cur] {
                if !members.contains(next) {
                    continue;
                }
                if next == start {
                    closing = Some(cur);
                    break 'bfs;
                }
                if seen.insert(next) {
                    prev.insert(next, cur);
                    queue.push_back(next);
                }
            }
        }
        let mut at = closing.expect("strongly connected component has a cycle through start");
        let mut path = vec![at.clone()];
        while at != start {
            at = prev[at];
            path.push(at.clone());
        }
        path.reverse();
        cycles.push(path);
    }
    cycles.sort();
    cycles
}

fn tarjan<'a>(adj: &BTreeMap<&'a NodeId, Vec<&'a NodeId>>) -> Vec<Vec<&'a NodeId>> {
    struct State<'a> {
        index: BTreeMap<&'a NodeId, usize>,
        low: BTreeMap<&'a NodeId, usize>,
        on_stack: BTreeSet<&'a NodeId>,
        stack: Vec<&'a NodeId>,
        next: usize,
        out: Vec<Vec<&'a NodeId>>,
    }
    let mut st = State {
        index: BTreeMap::new(),
        low: BTreeMap::new(),
        on_stack: BTreeSet::new(),
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    // Iterative DFS; frames hold (node, next-neighbour position).
    for &root in adj.keys() {
        if st.index.contains_key(root) {
            continue;
        }
        let mut frames: Vec<(&NodeId, usize)> = vec![(root, 0)];
        st.index.insert(root, st.next);
        st.low.insert(root, st.next);
        st.next += 1;
        st.stack.push(root);
        st.on_stack.insert(root);
        while let Some(&mut (v, ref mut pos)) = frames.last_mut() {
            if let Some(&w) = adj[v].get(*pos) {
                *pos += 1;
                if !st.index.contains_key(w) {
                    st.index.insert(w, st.next);
                    st.low.insert(w, st.next);
                    st.next += 1;
                    st.stack.push(w);
                    st.on_stack.insert(w);
                    frames.push((w, 0));
                } else if st.on_stack.contains(w) {
                    let lw = st.index[w];
                    let lv = st.low.get_mut(v).unwrap();
                    *lv = (*lv).min(lw);
                }
                continue;
            }
            frames.pop();
            if let Some(&(parent, _)) = frames.last() {
                let lv = st.low[v];
                let lp = st.low.get_mut(parent).unwrap();
                *lp = (*lp).min(lv);
            }
            if st.low[v] == st.index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = st.stack.pop().unwrap();
                    st.on_stack.remove(w);
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                st.out.push(comp);
            }
        }
    }
    st.out
}

fn orphan_systems(graph: &KnowledgeGraph) -> Vec<NodeId> {
    let mut children: BTreeMap<&NodeId, Vec<&NodeId>> = BTreeMap::new();
    for e in graph.edges_of_kind(EdgeKind::HasPart) {
        children.entry(&e.src).or_default().push(&e.dst);
    }
    let mut seen: BTreeSet<&NodeId> = BTreeSet::new();
    let mut queue: VecDeque<&NodeId> = graph
        .system_nodes()
        .filter(|s| s.level() == Level::LineFunction)
        .map(|s| &s.id)
        .collect();
    seen.extend(queue.iter().copied());
    while let Some(cur) = queue.pop_front() {
        for &child in children.get(cur).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(child) {
                queue.push_back(child);
            }
        }
    }
    graph
        .system_nodes()
        .filter(|s| !seen.contains(&s.id))
        .map(|s| s.id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{FailureCategory, FailureNode, SystemNode};

    fn sys(g: &mut KnowledgeGraph, id: &str, level: Level) {
        g.add_system_node(SystemNode::new(id, id, level)).unwrap();
    }

    fn fail(g: &mut KnowledgeGraph, id: &str) {
        g.add_failure_node(FailureNode {
            id: id.into(),
            label: id.into(),
            category: FailureCategory::accuracy(),
            description: String::new(),
            record_id: "r".into(),
        })
        .unwrap();
    }

    fn code(err: crate::ontology::GraphError) -> ViolationCode {
        match err {
            crate::ontology::GraphError::Violation(v) => v.code,
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn empty_graph_validates() {
        let mut g = KnowledgeGraph::new();
        assert!(g.validate_graph().is_empty());
        assert!(g.is_validated());
    }

    #[test]
    fn has_part_adjacency() {
        let mut g = KnowledgeGraph::new();
        sys(&mut g, "p", Level::ProcessFunction);
        sys(&mut g, "e", Level::ProcessElementFunction);
        sys(&mut g, "s", Level::Structure);
        sys(&mut g, "s2", Level::Structure);
        assert!(g.validate_edge(&Edge::has_part("p", "e")).is_ok());
        assert_eq!(
            code(g.validate_edge(&Edge::has_part("p", "s")).unwrap_err()),
            ViolationCode::NonAdjacentLevels
        );
        assert_eq!(
            code(g.validate_edge(&Edge::has_part("e", "p")).unwrap_err()),
            ViolationCode::NonAdjacentLevels
        );
        assert_eq!(
            code(g.validate_edge(&Edge::has_part("s", "s2")).unwrap_err()),
            ViolationCode::StructureNesting
        );
    }

    #[test]
    fn sequence_needs_same_level() {
        let mut g = KnowledgeGraph::new();
        sys(&mut g, "p", Level::ProcessFunction);
        sys(&mut g, "p2", Level::ProcessFunction);
        sys(&mut g, "b", Level::Behavior);
        assert!(g.validate_edge(&Edge::step_after("p2", "p")).is_ok());
        let err = g.validate_edge(&Edge::step_after("p", "b")).unwrap_err();
        assert_eq!(code(err.clone()), ViolationCode::CrossLevelSequence);
        assert!(err.to_string().contains("cross-level sequence"));
        assert_eq!(
            code(g.validate_edge(&Edge::step_after("p", "p")).unwrap_err()),
            ViolationCode::SelfLoop
        );
    }

    #[test]
    fn endpoint_kinds_and_unknown_ids() {
        let mut g = KnowledgeGraph::new();
        sys(&mut g, "s", Level::Behavior);
        fail(&mut g, "f");
        assert_eq!(
            code(g.validate_edge(&Edge::has_failure("f", "s")).unwrap_err()),
            ViolationCode::EndpointKind
        );
        assert_eq!(
            code(g.validate_edge(&Edge::has_cause("s", "f")).unwrap_err()),
            ViolationCode::EndpointKind
        );
        assert_eq!(
            code(g.validate_edge(&Edge::has_part("s", "f")).unwrap_err()),
            ViolationCode::EndpointKind
        );
        assert_eq!(
            code(g.validate_edge(&Edge::has_cause("f", "f")).unwrap_err()),
            ViolationCode::SelfLoop
        );
        assert_eq!(
            g.validate_edge(&Edge::has_cause("f", "ghost")).unwrap_err(),
            crate::ontology::GraphError::UnknownNode("ghost".into())
        );
    }

    #[test]
    fn two_cycle_reported_from_smallest_id() {
        let mut g = KnowledgeGraph::new();
        sys(&mut g, "line", Level::LineFunction);
        fail(&mut g, "f1");
        fail(&mut g, "f2");
        g.add_edge(Edge::has_failure("line", "f1")).unwrap();
        g.add_edge(Edge::has_failure("line", "f2")).unwrap();
        g.insert_edge_unchecked(Edge::has_cause("f2", "f1"));
        g.insert_edge_unchecked(Edge::has_cause("f1", "f2"));
        let report = g.validate_graph();
        assert_eq!(report.len(), 1);
        assert_eq!(
            report.cycles(),
            vec![&[NodeId::from("f1"), "f2".into()][..]]
        );
        assert!(!g.is_validated());
    }

    #[test]
    fn reports_attachment_and_orphans() {
        let mut g = KnowledgeGraph::new();
        sys(&mut g, "line", Level::LineFunction);
        sys(&mut g, "p", Level::ProcessFunction);
        sys(&mut g, "lost", Level::ProcessFunction);
        g.add_edge(Edge::has_part("line", "p")).unwrap();
        fail(&mut g, "loose");
        fail(&mut g, "double");
        g.insert_edge_unchecked(Edge::has_failure("p", "double"));
        g.insert_edge_unchecked(Edge::has_failure("line", "double"));
        let report = g.check();
        let codes: Vec<_> = report.violations.iter().map(|v| v.code).collect();
        assert_eq!(
            codes,
            vec![
                ViolationCode::MultipleAttachment,
                ViolationCode::MissingAttachment,
                ViolationCode::OrphanSystemNode
            ]
        );
        assert_eq!(
            report
                .with_code(ViolationCode::OrphanSystemNode)
                .next()
                .unwrap()
                .nodes,
            vec![NodeId::from("lost")]
        );
    }

    #[test]
    fn dangling_edge_names_the_id() {
        let mut g = KnowledgeGraph::new();
        sys(&mut g, "line", Level::LineFunction);
        g.insert_edge_unchecked(Edge::has_part("line", "ghost"));
        let report = g.validate_graph();
        let v = report
            .with_code(ViolationCode::UnknownEndpoint)
            .next()
            .unwrap();
        assert_eq!(v.nodes, vec![NodeId::from("ghost")]);
    }

    #[test]
    fn validation_is_idempotent() {
        let mut g = KnowledgeGraph::new();
        sys(&mut g, "line", Level::LineFunction);
        sys(&mut g, "orphan", Level::Behavior);
        let before = g.clone();
        let a = g.validate_graph();
        let b = g.validate_graph();
        assert_eq!(a, b);
        assert_eq!(g.system_count(), before.system_count());
        assert_eq!(g.edge_count(), before.edge_count());
    }
}
