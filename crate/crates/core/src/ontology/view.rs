use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{EdgeKind, FailureNode, KnowledgeGraph, Level, NodeId, SystemNode};

/// Read-only adjacency built once over a graph snapshot.
#[derive(Debug)]
pub struct GraphView<'g> {
    graph: &'g KnowledgeGraph,
    causes: BTreeMap<&'g NodeId, Vec<&'g NodeId>>,
    effects: BTreeMap<&'g NodeId, Vec<&'g NodeId>>,
    attachment: BTreeMap<&'g NodeId, &'g NodeId>,
    attached: BTreeMap<&'g NodeId, Vec<&'g NodeId>>,
    children: BTreeMap<&'g NodeId, Vec<&'g NodeId>>,
    parents: BTreeMap<&'g NodeId, Vec<&'g NodeId>>,
    successors: BTreeMap<&'g NodeId, Vec<&'g NodeId>>,
}

impl<'g> GraphView<'g> {
    pub fn new(graph: &'g KnowledgeGraph) -> Self {
        let mut view = GraphView {
            graph,
            causes: BTreeMap::new(),
            effects: BTreeMap::new(),
            attachment: BTreeMap::new(),
            attached: BTreeMap::new(),
            children: BTreeMap::new(),
            parents: BTreeMap::new(),
            successors: BTreeMap::new(),
        };
        // Edges iterate sorted by (kind, src, dst), so every list below is
        // sorted by id without further work.
        for e in graph.edges() {
            match e.kind {
                EdgeKind::HasPart => {
                    view.children.entry(&e.src).or_default().push(&e.dst);
                    view.parents.entry(&e.dst).or_default().push(&e.src);
                }
                EdgeKind::StepAfter => {
                    view.successors.entry(&e.dst).or_default().push(&e.src);
                }
                EdgeKind::HasFailure => {
                    view.attachment.entry(&e.dst).or_insert(&e.src);
                    view.attached.entry(&e.src).or_default().push(&e.dst);
                }
                EdgeKind::HasCause => {
                    view.causes.entry(&e.src).or_default().push(&e.dst);
                    view.effects.entry(&e.dst).or_default().push(&e.src);
                }
            }
        }
        for list in view.effects.values_mut().chain(view.parents.values_mut()) {
            list.sort();
        }
        view
    }

    pub fn graph(&self) -> &'g KnowledgeGraph {
        self.graph
    }

    pub fn causes(&self, failure: &NodeId) -> &[&'g NodeId] {
        self.causes.get(failure).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn effects(&self, failure: &NodeId) -> &[&'g NodeId] {
        self.effects.get(failure).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn attachment(&self, failure: &NodeId) -> Option<&'g SystemNode> {
        self.attachment
            .get(failure)
            .and_then(|s| self.graph.system_node(s))
    }

    pub fn attachment_level(&self, failure: &NodeId) -> Option<Level> {
        self.attachment(failure).map(SystemNode::level)
    }

    pub fn failures_at(&self, system: &NodeId) -> &[&'g NodeId] {
        self.attached.get(system).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn children(&self, system: &NodeId) -> &[&'g NodeId] {
        self.children.get(system).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn parents(&self, system: &NodeId) -> &[&'g NodeId] {
        self.parents.get(system).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Nodes that are `step_After` the given one.
    pub fn next_steps(&self, system: &NodeId) -> &[&'g NodeId] {
        self.successors
            .get(system)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn failure(&self, id: &NodeId) -> Option<&'g FailureNode> {
        self.graph.failure_node(id)
    }

    pub fn system(&self, id: &NodeId) -> Option<&'g SystemNode> {
        self.graph.system_node(id)
    }

    /// Every HasPart ancestor of a system node, nearest first, deduplicated.
    pub fn ancestors(&self, system: &NodeId) -> Vec<&'g NodeId> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&NodeId> = VecDeque::from([system]);
        while let Some(cur) = queue.pop_front() {
            for &p in self.parents(cur) {
                if seen.insert(p) {
                    out.push(p);
                    queue.push_back(p);
                }
            }
        }
        out
    }

    /// The node itself plus every HasPart descendant.
    pub fn subtree(&self, root: &'g NodeId) -> BTreeSet<&'g NodeId> {
        let mut seen = BTreeSet::from([root]);
        let mut queue = VecDeque::from([root]);
        while let Some(cur) = queue.pop_front() {
            for &c in self.children(cur) {
                if seen.insert(c) {
                    queue.push_back(c);
                }
            }
        }
        seen
    }
}
