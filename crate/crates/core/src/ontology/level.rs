use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the five levels of the FBS hierarchy, ordered from the whole line
/// down to physical structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    LineFunction,
    ProcessFunction,
    ProcessElementFunction,
    Behavior,
    Structure,
}

impl Level {
    pub const ALL: [Level; 5] = [
        Level::LineFunction,
        Level::ProcessFunction,
        Level::ProcessElementFunction,
        Level::Behavior,
        Level::Structure,
    ];

    pub fn rank(self) -> u8 {
        match self {
            Level::LineFunction => 0,
            Level::ProcessFunction => 1,
            Level::ProcessElementFunction => 2,
            Level::Behavior => 3,
            Level::Structure => 4,
        }
    }

    pub fn from_rank(rank: u8) -> Option<Level> {
        Level::ALL.get(rank as usize).copied()
    }

    /// The level directly below this one, if any.
    pub fn child(self) -> Option<Level> {
        Level::from_rank(self.rank() + 1)
    }

    pub fn parent(self) -> Option<Level> {
        self.rank().checked_sub(1).and_then(Level::from_rank)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::LineFunction => "LineFunction",
            Level::ProcessFunction => "ProcessFunction",
            Level::ProcessElementFunction => "ProcessElementFunction",
            Level::Behavior => "Behavior",
            Level::Structure => "Structure",
        }
    }
}

/// Free function form of [`Level::rank`].
pub fn level_rank(level: Level) -> u8 {
    level.rank()
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown level `{0}` (expected one of LineFunction, ProcessFunction, ProcessElementFunction, Behavior, Structure)")]
pub struct ParseLevelError(pub String);

impl FromStr for Level {
    type Err = ParseLevelError;

    /// Accepts the canonical names case-insensitively, with or without `_`/`-`
    /// separators (`process-element-function`, `PROCESS_FUNCTION`, ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        let level = match folded.as_str() {
            "linefunction" | "line" => Level::LineFunction,
            "processfunction" | "process" => Level::ProcessFunction,
            "processelementfunction" | "processelement" | "element" => {
                Level::ProcessElementFunction
            }
            "behavior" | "behaviour" => Level::Behavior,
            "structure" => Level::Structure,
            _ => return Err(ParseLevelError(s.to_string())),
        };
        Ok(level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_follow_hierarchy() {
        assert_eq!(level_rank(Level::LineFunction), 0);
        assert_eq!(level_rank(Level::Behavior), 3);
        assert_eq!(level_rank(Level::Structure), 4);
        for pair in Level::ALL.windows(2) {
            assert!(pair[0].rank() < pair[1].rank());
            assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn child_and_parent_are_inverse() {
        assert_eq!(Level::Structure.child(), None);
        assert_eq!(Level::LineFunction.parent(), None);
        for level in Level::ALL {
            if let Some(c) = level.child() {
                assert_eq!(c.parent(), Some(level));
            }
        }
        assert_eq!(Level::from_rank(5), None);
    }

    #[test]
    fn parses_loose_spellings() {
        assert_eq!(
            "process-element-function".parse(),
            Ok(Level::ProcessElementFunction)
        );
        assert_eq!("PROCESS_FUNCTION".parse(), Ok(Level::ProcessFunction));
        assert_eq!("Behaviour".parse(), Ok(Level::Behavior));
        assert!("subassembly".parse::<Level>().is_err());
        for level in Level::ALL {
            assert_eq!(level.as_str().parse(), Ok(level));
        }
    }
}
