use std::collections::{BTreeMap, BTreeSet};

use super::validate::{self, ValidationReport, Violation, ViolationCode};
use super::{Edge, EdgeKind, FailureNode, GraphMetadata, Level, NodeId, RecordInfo, SystemNode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("node id `{0}` already exists")]
    DuplicateId(NodeId),
    #[error("unknown node id `{0}`")]
    UnknownNode(NodeId),
    #[error("{0}")]
    Violation(Violation),
}

impl GraphError {
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::DuplicateId(_) => "duplicate-id",
            GraphError::UnknownNode(_) => "unknown-endpoint",
            GraphError::Violation(v) => v.code.as_str(),
        }
    }
}

/// Either kind of node, borrowed from a graph.
#[derive(Debug, Clone, Copy)]
pub enum NodeRef<'g> {
    System(&'g SystemNode),
    Failure(&'g FailureNode),
}

/// Typed multigraph holding the FBS model and the failures attached to it.
///
/// `validated` is set only by [`KnowledgeGraph::validate_graph`] and cleared by
/// every mutation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    pub(crate) system_nodes: BTreeMap<NodeId, SystemNode>,
    pub(crate) failure_nodes: BTreeMap<NodeId, FailureNode>,
    pub(crate) edges: BTreeSet<Edge>,
    pub(crate) records: BTreeMap<String, RecordInfo>,
    pub metadata: GraphMetadata,
    validated: bool,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_validated(&self) -> bool {
        self.validated
    }

    pub fn system_nodes(&self) -> impl Iterator<Item = &SystemNode> {
        self.system_nodes.values()
    }

    pub fn failure_nodes(&self) -> impl Iterator<Item = &FailureNode> {
        self.failure_nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn edges_of_kind(&self, kind: EdgeKind) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    pub fn records(&self) -> impl Iterator<Item = &RecordInfo> {
        self.records.values()
    }

    pub fn record(&self, record_id: &str) -> Option<&RecordInfo> {
        self.records.get(record_id)
    }

    pub fn system_node(&self, id: &NodeId) -> Option<&SystemNode> {
        self.system_nodes.get(id)
    }

    pub fn failure_node(&self, id: &NodeId) -> Option<&FailureNode> {
        self.failure_nodes.get(id)
    }

    pub fn node(&self, id: &NodeId) -> Option<NodeRef<'_>> {
        if let Some(s) = self.system_nodes.get(id) {
            return Some(NodeRef::System(s));
        }
        self.failure_nodes.get(id).map(NodeRef::Failure)
    }

    pub fn contains_node(&self, id: &NodeId) -> bool {
        self.system_nodes.contains_key(id) || self.failure_nodes.contains_key(id)
    }

    pub fn contains_edge(&self, edge: &Edge) -> bool {
        self.edges.contains(edge)
    }

    pub fn system_count(&self) -> usize {
        self.system_nodes.len()
    }

    pub fn failure_count(&self) -> usize {
        self.failure_nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Count of HasPart and StepAfter edges (the FBS model proper).
    pub fn system_edge_count(&self) -> usize {
        self.edges
            .iter()
            .filter(|e| e.kind.is_system_edge())
            .count()
    }

    pub fn add_system_node(&mut self, node: SystemNode) -> Result<(), GraphError> {
        if self.contains_node(&node.id) {
            return Err(GraphError::DuplicateId(node.id));
        }
        self.validated = false;
        self.system_nodes.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn add_failure_node(&mut self, node: FailureNode) -> Result<(), GraphError> {
        if self.contains_node(&node.id) {
            return Err(GraphError::DuplicateId(node.id));
        }
        self.validated = false;
        self.failure_nodes.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn upsert_record(&mut self, info: RecordInfo) {
        self.validated = false;
        self.records.insert(info.record_id.clone(), info);
    }

    /// Checked insertion. Rejections are reported in this order: unknown
    /// endpoint, endpoint kind, self loop, level rule, duplicate triple,
    /// second attachment of a failure, HasCause cycle.
    pub fn add_edge(&mut self, edge: Edge) -> Result<(), GraphError> {
        self.validate_edge(&edge)?;
        if self.edges.contains(&edge) {
            return Err(GraphError::Violation(Violation::new(
                ViolationCode::DuplicateEdge,
                format!("edge {edge} already present"),
                vec![edge.src.clone(), edge.dst.clone()],
            )));
        }
        match edge.kind {
            EdgeKind::HasFailure => {
                if let Some(existing) = self.attachments_of(&edge.dst).into_iter().next() {
                    return Err(GraphError::Violation(Violation::new(
                        ViolationCode::MultipleAttachment,
                        format!("failure {} is already attached to {existing}", edge.dst),
                        vec![edge.dst.clone(), existing.clone(), edge.src.clone()],
                    )));
                }
            }
            EdgeKind::HasCause => {
                // Adding effect -> cause closes a cycle iff the effect is
                // already reachable from the cause along HasCause.
                if let Some(path) = self.cause_path(&edge.dst, &edge.src) {
                    return Err(GraphError::Violation(Violation::new(
                        ViolationCode::CauseCycle,
                        format!("edge {edge} would close a HasCause cycle"),
                        path,
                    )));
                }
            }
            _ => {}
        }
        self.validated = false;
        self.edges.insert(edge);
        Ok(())
    }

    /// Inserts without any rule checks. Used by loaders and tests that need to
    /// materialize invalid graphs; [`validate_graph`](Self::validate_graph)
    /// reports whatever this lets through.
    pub fn insert_edge_unchecked(&mut self, edge: Edge) -> bool {
        self.validated = false;
        self.edges.insert(edge)
    }

    pub fn remove_edge(&mut self, edge: &Edge) -> bool {
        self.validated = false;
        self.edges.remove(edge)
    }

    /// Local check of one edge against the rules of its kind. Acyclicity and
    /// attachment multiplicity are global and left to `add_edge` /
    /// `validate_graph`.
    pub fn validate_edge(&self, edge: &Edge) -> Result<(), GraphError> {
        for id in [&edge.src, &edge.dst] {
            if !self.contains_node(id) {
                return Err(GraphError::UnknownNode(id.clone()));
            }
        }
        validate::check_edge_local(self, edge).map_err(GraphError::Violation)
    }

    /// Full-graph check. Sets the validated flag iff the report is empty.
    pub fn validate_graph(&mut self) -> ValidationReport {
        let report = validate::validate(self);
        self.validated = report.is_empty();
        report
    }

    /// For callers that have preserved every invariant through checked inserts.
    pub(crate) fn mark_validated(&mut self) {
        self.validated = true;
    }

    /// Same report as [`validate_graph`](Self::validate_graph) without touching the flag.
    pub fn check(&self) -> ValidationReport {
        validate::validate(self)
    }

    /// Failures that `failure_id` directly causes, i.e. every `y` with a
    /// stored `HasCause(y -> failure_id)`. Sorted by id.
    pub fn effects_of(&self, failure_id: &NodeId) -> Result<Vec<NodeId>, GraphError> {
        if !self.failure_nodes.contains_key(failure_id) {
            return Err(GraphError::UnknownNode(failure_id.clone()));
        }
        Ok(self
            .edges_of_kind(EdgeKind::HasCause)
            .filter(|e| &e.dst == failure_id)
            .map(|e| e.src.clone())
            .collect())
    }

    /// Direct causes of `failure_id`, sorted by id.
    pub fn direct_causes_of(&self, failure_id: &NodeId) -> Result<Vec<NodeId>, GraphError> {
        if !self.failure_nodes.contains_key(failure_id) {
            return Err(GraphError::UnknownNode(failure_id.clone()));
        }
        Ok(self.causes_unchecked(failure_id))
    }

    pub(crate) fn causes_unchecked(&self, failure_id: &NodeId) -> Vec<NodeId> {
        let lo = Edge::new(EdgeKind::HasCause, failure_id.clone(), NodeId::new(""));
        self.edges
            .range(lo..)
            .take_while(|e| e.kind == EdgeKind::HasCause && &e.src == failure_id)
            .map(|e| e.dst.clone())
            .collect()
    }

    /// System nodes a failure is attached to (exactly one in a valid graph).
    pub fn attachments_of(&self, failure_id: &NodeId) -> Vec<&NodeId> {
        self.edges_of_kind(EdgeKind::HasFailure)
            .filter(|e| &e.dst == failure_id)
            .map(|e| &e.src)
            .collect()
    }

    /// Level of the system node a failure is attached to.
    pub fn attachment_level(&self, failure_id: &NodeId) -> Option<Level> {
        self.attachments_of(failure_id)
            .first()
            .and_then(|s| self.system_nodes.get(*s))
            .map(SystemNode::level)
    }

    /// Shortest HasCause path `from -> ... -> to`, if any.
    fn cause_path(&self, from: &NodeId, to: &NodeId) -> Option<Vec<NodeId>> {
        use std::collections::VecDeque;
        let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut seen: BTreeSet<NodeId> = BTreeSet::from([from.clone()]);
        let mut queue = VecDeque::from([from.clone()]);
        while let Some(cur) = queue.pop_front() {
            if &cur == to {
                let mut path = vec![cur.clone()];
                let mut at = cur;
                while let Some(p) = prev.get(&at) {
                    path.push(p.clone());
                    at = p.clone();
                }
                path.reverse();
                return Some(path);
            }
            for next in self.causes_unchecked(&cur) {
                if seen.insert(next.clone()) {
                    prev.insert(next.clone(), cur.clone());
                    queue.push_back(next);
                }
            }
        }
        None
    }
}
