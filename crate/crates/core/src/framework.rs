//! Framework identifiers, ordered framework sets and the two-action decision space.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UTILITARIAN: &str = "utilitarian";
pub const DEONTOLOGICAL: &str = "deontological";
pub const VIRTUE: &str = "virtue";

/// Lowercase identifier of a moral framework, e.g. `utilitarian`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameworkId(String);

impl FrameworkId {
    pub fn new(name: impl AsRef<str>) -> Self {
        FrameworkId(name.as_ref().trim().to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Short column label used in curve files (`util`, `deont`, `virtue`).
    pub fn short_label(&self) -> &str {
        match self.0.as_str() {
            UTILITARIAN => "util",
            DEONTOLOGICAL => "deont",
            other => other,
        }
    }
}

impl fmt::Display for FrameworkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FrameworkId {
    fn from(s: &str) -> Self {
        FrameworkId::new(s)
    }
}

/// Ordered, duplicate-free list of frameworks. Report columns follow this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FrameworkId>", into = "Vec<FrameworkId>")]
pub struct FrameworkSet {
    frameworks: Vec<FrameworkId>,
}

impl FrameworkSet {
    pub fn new(frameworks: Vec<FrameworkId>) -> Result<Self> {
        if frameworks.is_empty() {
            return Err(Error::Config("framework set must not be empty".into()));
        }
        for (i, f) in frameworks.iter().enumerate() {
            if f.as_str().is_empty() {
                return Err(Error::Config("framework identifiers must be non-empty".into()));
            }
            if frameworks[..i].contains(f) {
                return Err(Error::Config(format!("duplicate framework `{f}`")));
            }
        }
        Ok(FrameworkSet { frameworks })
    }

    pub fn len(&self) -> usize {
        self.frameworks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frameworks.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FrameworkId> {
        self.frameworks.iter()
    }

    pub fn as_slice(&self) -> &[FrameworkId] {
        &self.frameworks
    }

    pub fn index_of(&self, f: &FrameworkId) -> Option<usize> {
        self.frameworks.iter().position(|x| x == f)
    }

    pub fn contains(&self, f: &FrameworkId) -> bool {
        self.index_of(f).is_some()
    }

    /// Resolves a user-supplied name, or fails listing the valid names.
    pub fn resolve(&self, name: &str) -> Result<FrameworkId> {
        let id = FrameworkId::new(name);
        if self.contains(&id) {
            Ok(id)
        } else {
            Err(Error::UnknownFramework {
                name: name.to_string(),
                valid: self.names().join(", "),
            })
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.frameworks.iter().map(|f| f.as_str()).collect()
    }
}

impl Default for FrameworkSet {
    fn default() -> Self {
        FrameworkSet {
            frameworks: vec![
                FrameworkId::new(UTILITARIAN),
                FrameworkId::new(DEONTOLOGICAL),
                FrameworkId::new(VIRTUE),
            ],
        }
    }
}

impl TryFrom<Vec<FrameworkId>> for FrameworkSet {
    type Error = Error;
    fn try_from(v: Vec<FrameworkId>) -> Result<Self> {
        FrameworkSet::new(v)
    }
}

impl From<FrameworkSet> for Vec<FrameworkId> {
    fn from(s: FrameworkSet) -> Self {
        s.frameworks
    }
}

impl<'a> IntoIterator for &'a FrameworkSet {
    type Item = &'a FrameworkId;
    type IntoIter = std::slice::Iter<'a, FrameworkId>;
    fn into_iter(self) -> Self::IntoIter {
        self.frameworks.iter()
    }
}

/// One of the two candidate actions of a scenario (`A` is the first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionIndex {
    A,
    B,
}

impl ActionIndex {
    pub const BOTH: [ActionIndex; 2] = [ActionIndex::A, ActionIndex::B];

    pub fn index(self) -> usize {
        match self {
            ActionIndex::A => 0,
            ActionIndex::B => 1,
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            ActionIndex::A => "A",
            ActionIndex::B => "B",
        }
    }
}

/// Outcome of reading a decision off a completion or a dataset record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    A,
    B,
    Unclear,
}

impl Decision {
    pub fn action(self) -> Option<ActionIndex> {
        match self {
            Decision::A => Some(ActionIndex::A),
            Decision::B => Some(ActionIndex::B),
            Decision::Unclear => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::A => "A",
            Decision::B => "B",
            Decision::Unclear => "Unclear",
        }
    }

    /// Lenient parse of dataset decision values: `A`/`B`, `1`/`2`, `a1`/`a2`,
    /// `action_a`/`action_b`, case-insensitive. Anything else is `Unclear`.
    pub fn parse_lenient(raw: &str) -> Decision {
        let v = raw.trim().trim_matches(|c: char| c == '(' || c == ')' || c == '.').to_lowercase();
        match v.as_str() {
            "a" | "1" | "a1" | "a_1" | "action_a" | "action a" | "option a" => Decision::A,
            "b" | "2" | "a2" | "a_2" | "action_b" | "action b" | "option b" => Decision::B,
            _ => Decision::Unclear,
        }
    }
}

/// The policy's decision-slot vocabulary. `Abstain` reads as [`Decision::Unclear`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionToken {
    A,
    B,
    Abstain,
}

impl DecisionToken {
    pub const ALL: [DecisionToken; 3] = [DecisionToken::A, DecisionToken::B, DecisionToken::Abstain];

    pub fn index(self) -> usize {
        match self {
            DecisionToken::A => 0,
            DecisionToken::B => 1,
            DecisionToken::Abstain => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn text(self) -> &'static str {
        match self {
            DecisionToken::A => "<A>",
            DecisionToken::B => "<B>",
            DecisionToken::Abstain => "<ABSTAIN>",
        }
    }

    pub fn from_text(t: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.text() == t)
    }

    pub fn decision(self) -> Decision {
        match self {
            DecisionToken::A => Decision::A,
            DecisionToken::B => Decision::B,
            DecisionToken::Abstain => Decision::Unclear,
        }
    }
}

impl From<ActionIndex> for Decision {
    fn from(a: ActionIndex) -> Self {
        match a {
            ActionIndex::A => Decision::A,
            ActionIndex::B => Decision::B,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
