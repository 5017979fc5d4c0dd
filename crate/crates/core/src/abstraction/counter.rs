use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Which parts of the abstraction enter the counting key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiComponents {
    pub position: bool,
    pub context: bool,
    pub reward: bool,
}

impl Default for PsiComponents {
    fn default() -> Self {
        Self {
            position: true,
            context: true,
            reward: true,
        }
    }
}

impl PsiComponents {
    /// Ablation variants in a fixed order: (c), (c,R), (x,y,c), (x,y,c,R).
    pub const ABLATION: [PsiComponents; 4] = [
        PsiComponents { position: false, context: true, reward: false },
        PsiComponents { position: false, context: true, reward: true },
        PsiComponents { position: true, context: true, reward: false },
        PsiComponents { position: true, context: true, reward: true },
    ];

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.position {
            parts.extend(["x", "y"]);
        }
        if self.context {
            parts.push("c");
        }
        if self.reward {
            parts.push("R");
        }
        format!("({})", parts.join(","))
    }
}

/// Counting key. Components switched off are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AbstractState {
    pub x: Option<usize>,
    pub y: Option<usize>,
    pub c: Option<usize>,
    pub r: Option<i64>,
}

impl AbstractState {
    /// Builds the key from a grid location (x = column, y = row), an
    /// optional context id and the unclipped cumulative external reward.
    pub fn new(loc: Option<(usize, usize)>, cluster: Option<usize>, cumulative_reward: Option<f64>) -> Self {
        Self {
            x: loc.map(|l| l.0),
            y: loc.map(|l| l.1),
            c: cluster,
            r: cumulative_reward.map(|v| v.floor() as i64),
        }
    }

    /// Drops disabled components.
    pub fn masked(&self, psi: PsiComponents) -> Self {
        Self {
            x: self.x.filter(|_| psi.position),
            y: self.y.filter(|_| psi.position),
            c: self.c.filter(|_| psi.context),
            r: self.r.filter(|_| psi.reward),
        }
    }
}

/// Exact visitation counts per abstract state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VisitCounter {
    counts: HashMap<AbstractState, u64>,
}

impl VisitCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Increments the count of `psi`, then returns `1/√count`.
    pub fn count_and_bonus(&mut self, psi: AbstractState) -> f64 {
        let n = self.counts.entry(psi).or_insert(0);
        *n += 1;
        1.0 / (*n as f64).sqrt()
    }

    pub fn count(&self, psi: &AbstractState) -> u64 {
        self.counts.get(psi).copied().unwrap_or(0)
    }

    /// Number of distinct keys seen.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Entries sorted by key, for stable serialization.
    pub fn entries(&self) -> Vec<(AbstractState, u64)> {
        let mut v: Vec<_> = self.counts.iter().map(|(k, v)| (*k, *v)).collect();
        v.sort();
        v
    }

    pub fn from_entries(entries: Vec<(AbstractState, u64)>) -> Self {
        Self {
            counts: entries.into_iter().filter(|(_, n)| *n > 0).collect(),
        }
    }
}

impl Serialize for VisitCounter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.entries().serialize(s)
    }
}

impl<'de> Deserialize<'de> for VisitCounter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Self::from_entries(Vec::deserialize(d)?))
    }
}
