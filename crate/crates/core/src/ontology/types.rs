use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Level;

/// Opaque node identifier. System and failure nodes share one namespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

impl AsRef<str> for NodeId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Element of the FBS model (deep knowledge).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemNode {
    pub id: NodeId,
    pub label: String,
    level: Level,
    #[serde(default)]
    pub description: String,
}

impl SystemNode {
    pub fn new(id: impl Into<NodeId>, label: impl Into<String>, level: Level) -> Self {
        SystemNode {
            id: id.into(),
            label: label.into(),
            level,
            description: String::new(),
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    /// Fixed at construction.
    pub fn level(&self) -> Level {
        self.level
    }
}

/// Classification tag of a failure. Open set; three defaults ship.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct FailureCategory(String);

impl FailureCategory {
    pub const MOTION: &'static str = "motion";
    pub const MECHANISM_STRUCTURE: &'static str = "mechanism_structure";
    pub const ACCURACY: &'static str = "accuracy";

    pub fn new(tag: impl Into<String>) -> Result<Self, EmptyCategory> {
        let tag = tag.into();
        if tag.trim().is_empty() {
            return Err(EmptyCategory);
        }
        Ok(FailureCategory(tag))
    }

    pub fn motion() -> Self {
        FailureCategory(Self::MOTION.to_string())
    }

    pub fn mechanism_structure() -> Self {
        FailureCategory(Self::MECHANISM_STRUCTURE.to_string())
    }

    pub fn accuracy() -> Self {
        FailureCategory(Self::ACCURACY.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("failure category must be a non-empty string")]
pub struct EmptyCategory;

impl FromStr for FailureCategory {
    type Err = EmptyCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FailureCategory::new(s)
    }
}

impl<'de> Deserialize<'de> for FailureCategory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        FailureCategory::new(raw).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One observed failure (shallow knowledge), introduced by a maintenance record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureNode {
    pub id: NodeId,
    pub label: String,
    pub category: FailureCategory,
    #[serde(default)]
    pub description: String,
    pub record_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeKind {
    HasPart,
    StepAfter,
    HasFailure,
    /// Stored as (effect -> cause).
    HasCause,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 4] = [
        EdgeKind::HasPart,
        EdgeKind::StepAfter,
        EdgeKind::HasFailure,
        EdgeKind::HasCause,
    ];

    /// Relationship type name used in exports.
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::HasPart => "HAS_PART",
            EdgeKind::StepAfter => "STEP_AFTER",
            EdgeKind::HasFailure => "HAS_FAILURE",
            EdgeKind::HasCause => "HAS_CAUSE",
        }
    }

    pub fn is_system_edge(self) -> bool {
        matches!(self, EdgeKind::HasPart | EdgeKind::StepAfter)
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EdgeKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown edge kind `{s}`"))
    }
}

/// Ordered by (kind, src, dst), which is also the canonical serialization order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub src: NodeId,
    pub dst: NodeId,
}

impl Edge {
    pub fn new(kind: EdgeKind, src: impl Into<NodeId>, dst: impl Into<NodeId>) -> Self {
        Edge {
            kind,
            src: src.into(),
            dst: dst.into(),
        }
    }

    pub fn has_part(parent: impl Into<NodeId>, child: impl Into<NodeId>) -> Self {
        Edge::new(EdgeKind::HasPart, parent, child)
    }

    /// `later` is the step after `earlier`.
    pub fn step_after(later: impl Into<NodeId>, earlier: impl Into<NodeId>) -> Self {
        Edge::new(EdgeKind::StepAfter, later, earlier)
    }

    pub fn has_failure(system: impl Into<NodeId>, failure: impl Into<NodeId>) -> Self {
        Edge::new(EdgeKind::HasFailure, system, failure)
    }

    pub fn has_cause(effect: impl Into<NodeId>, cause: impl Into<NodeId>) -> Self {
        Edge::new(EdgeKind::HasCause, effect, cause)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({} -> {})", self.kind, self.src, self.dst)
    }
}

/// Provenance of one maintenance record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordInfo {
    pub record_id: String,
    #[serde(default)]
    pub author: String,
    /// ISO-8601, uninterpreted.
    #[serde(default)]
    pub date: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<String>,
    #[serde(default)]
    pub source: String,
}
