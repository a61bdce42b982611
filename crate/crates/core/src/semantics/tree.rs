use std::sync::Arc;

use rustc_hash::FxHashMap;

use super::StateId;

/// One depth of an execution tree.
#[derive(Debug, Clone, Default)]
pub struct Level {
    pub(crate) states: Vec<StateId>,
    /// Index of each state's parent in the previous level.
    pub(crate) parent: Vec<u32>,
    /// Children of state `i` occupy `child_start[i]..child_start[i + 1]` of
    /// the next level; empty until that level exists.
    pub(crate) child_start: Vec<u32>,
    /// `class[a][i]`: the `~_a` class of state `i`.
    pub(crate) class: Vec<Vec<u32>>,
    /// `cells[a][k]`: the members of class `k` for agent `a`.
    pub(crate) cells: Vec<Vec<Arc<[StateId]>>>,
}

impl Level {
    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn parent(&self, i: usize) -> usize {
        self.parent[i] as usize
    }

    /// Indices in the next level of the children of state `i`, or `None`
    /// when the next level has not been built.
    pub fn children(&self, i: usize) -> Option<std::ops::Range<usize>> {
        if self.child_start.is_empty() {
            return None;
        }
        Some(self.child_start[i] as usize..self.child_start[i + 1] as usize)
    }

    pub fn class_of(&self, agent: usize, i: usize) -> usize {
        self.class[agent][i] as usize
    }

    pub fn cells(&self, agent: usize) -> &[Arc<[StateId]>] {
        &self.cells[agent]
    }
}

/// The permitted histories of one protocol on one initial graph, built
/// level by level on demand.
#[derive(Debug, Clone, Default)]
pub struct Tree {
    pub(crate) levels: Vec<Level>,
    pub(crate) index: FxHashMap<StateId, (u32, u32)>,
    pub(crate) complete: bool,
}

impl Tree {
    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Whether every permitted history is present.
    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn position(&self, s: StateId) -> Option<(usize, usize)> {
        self.index.get(&s).map(|&(l, i)| (l as usize, i as usize))
    }

    pub fn contains(&self, s: StateId) -> bool {
        self.index.contains_key(&s)
    }

    pub fn size(&self) -> usize {
        self.index.len()
    }

    /// `Some(true)` when the state has no permitted call; `None` while
    /// unknown.
    pub fn is_terminal(&self, s: StateId) -> Option<bool> {
        let (l, i) = self.position(s)?;
        self.levels[l].children(i).map(|r| r.is_empty())
    }

    /// The `~_a` cell of a state in the tree.
    pub fn cell(&self, agent: usize, s: StateId) -> Option<&Arc<[StateId]>> {
        let (l, i) = self.position(s)?;
        let level = &self.levels[l];
        Some(&level.cells[agent][level.class[agent][i] as usize])
    }

    /// Terminal states in level order. Only meaningful on a complete tree.
    pub fn terminals(&self) -> Vec<StateId> {
        let mut out = Vec::new();
        for level in &self.levels {
            for (i, &s) in level.states.iter().enumerate() {
                if level.children(i).is_none_or(|r| r.is_empty()) {
                    out.push(s);
                }
            }
        }
        out
    }

    /// Every state in level order.
    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.levels.iter().flat_map(|l| l.states.iter().copied())
    }
}
