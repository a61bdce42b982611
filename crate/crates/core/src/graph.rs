//! Gossip graphs, calls and call sequences.
//!
//! Agent sets are `u32` bit masks, so a graph holds at most [`MAX_AGENTS`]
//! agents, which is also the size of the letter alphabet used by the text
//! notation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_AGENTS: usize = 26;

/// Default probability of an initial number edge in [`GossipGraph::random`].
pub const DEFAULT_EDGE_PROBABILITY: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Agent(pub u8);

impl Agent {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    fn letter(self, upper: bool) -> char {
        let base = if upper { b'A' } else { b'a' };
        (base + self.0) as char
    }
}

impl From<usize> for Agent {
    fn from(i: usize) -> Self {
        debug_assert!(i < MAX_AGENTS);
        Agent(i as u8)
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 < 10 {
            write!(f, "{}", self.0)
        } else {
            write!(f, "({})", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct AgentSet(pub u32);

impl AgentSet {
    pub const EMPTY: AgentSet = AgentSet(0);

    pub fn singleton(a: Agent) -> Self {
        AgentSet(1 << a.0)
    }

    pub fn all(n: usize) -> Self {
        if n >= 32 {
            AgentSet(u32::MAX)
        } else {
            AgentSet((1u32 << n) - 1)
        }
    }

    pub fn contains(self, a: Agent) -> bool {
        self.0 & (1 << a.0) != 0
    }

    pub fn insert(&mut self, a: Agent) {
        self.0 |= 1 << a.0;
    }

    pub fn union(self, other: AgentSet) -> AgentSet {
        AgentSet(self.0 | other.0)
    }

    pub fn is_subset(self, other: AgentSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Agent> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros();
            bits &= bits - 1;
            Some(Agent(i as u8))
        })
    }
}

impl FromIterator<Agent> for AgentSet {
    fn from_iter<I: IntoIterator<Item = Agent>>(iter: I) -> Self {
        let mut s = AgentSet::EMPTY;
        for a in iter {
            s.insert(a);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Call {
    pub caller: Agent,
    pub callee: Agent,
}

impl Call {
    pub fn new(caller: impl Into<Agent>, callee: impl Into<Agent>) -> Result<Self> {
        let (caller, callee) = (caller.into(), callee.into());
        if caller == callee {
            return Err(Error::SelfCall(caller.index()));
        }
        Ok(Call { caller, callee })
    }

    /// Whether `a` takes part in the call, as caller or callee.
    pub fn involves(self, a: Agent) -> bool {
        self.caller == a || self.callee == a
    }

    /// All ordered pairs of distinct agents, by (caller, callee) ascending.
    pub fn all(n: usize) -> Vec<Call> {
        let mut calls = Vec::with_capacity(n * n.saturating_sub(1));
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    calls.push(Call {
                        caller: Agent(a as u8),
                        callee: Agent(b as u8),
                    });
                }
            }
        }
        calls
    }
}

impl fmt::Display for Call {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.caller, self.callee)
    }
}

fn parse_agent_token(chars: &[char], pos: &mut usize) -> Result<Agent> {
    let c = *chars
        .get(*pos)
        .ok_or_else(|| Error::parse(*pos, "expected an agent"))?;
    if let Some(d) = c.to_digit(10) {
        *pos += 1;
        return Ok(Agent(d as u8));
    }
    if c.is_ascii_lowercase() {
        *pos += 1;
        return Ok(Agent(c as u8 - b'a'));
    }
    if c == '(' {
        let start = *pos + 1;
        let end = chars[start..]
            .iter()
            .position(|&c| c == ')')
            .map(|i| start + i)
            .ok_or_else(|| Error::parse(*pos, "unclosed agent index"))?;
        let text: String = chars[start..end].iter().collect();
        let i: usize = text
            .parse()
            .map_err(|_| Error::parse(start, format!("bad agent index `{text}`")))?;
        if i >= MAX_AGENTS {
            return Err(Error::AgentOutOfRange {
                agent: i,
                n: MAX_AGENTS,
            });
        }
        *pos = end + 1;
        return Ok(Agent(i as u8));
    }
    Err(Error::parse(*pos, format!("unexpected `{c}`, expected an agent")))
}

impl FromStr for Call {
    type Err = Error;

    /// Accepts digit pairs (`20`), letter pairs (`ab`) or parenthesised
    /// indices (`(10)(11)`).
    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.trim().chars().collect();
        let mut pos = 0;
        let caller = parse_agent_token(&chars, &mut pos)?;
        let callee = parse_agent_token(&chars, &mut pos)?;
        if pos != chars.len() {
            return Err(Error::parse(pos, "trailing input after call"));
        }
        Call::new(caller, callee)
    }
}

/// A history of calls; the empty sequence is written as the empty string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CallSequence(pub Vec<Call>);

impl CallSequence {
    pub fn empty() -> Self {
        CallSequence(Vec::new())
    }

    pub fn calls(&self) -> &[Call] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, c: Call) {
        self.0.push(c);
    }

    pub fn extended(&self, c: Call) -> Self {
        let mut s = self.clone();
        s.push(c);
        s
    }

    pub fn starts_with(&self, prefix: &CallSequence) -> bool {
        self.0.starts_with(&prefix.0)
    }

    pub fn permute(&self, perm: &Permutation) -> CallSequence {
        CallSequence(self.0.iter().map(|&c| perm.apply_call(c)).collect())
    }
}

impl From<Vec<Call>> for CallSequence {
    fn from(v: Vec<Call>) -> Self {
        CallSequence(v)
    }
}

impl fmt::Display for CallSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for CallSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "ε" || s == "eps" {
            return Ok(CallSequence::empty());
        }
        s.split(';')
            .map(|tok| tok.parse::<Call>())
            .collect::<Result<Vec<_>>>()
            .map(CallSequence)
    }
}

/// Agents with the relations N (numbers known) and S (secrets known).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GossipGraph {
    num: Vec<AgentSet>,
    sec: Vec<AgentSet>,
}

impl GossipGraph {
    /// Builds a graph from explicit rows, checking `I ⊆ S ⊆ N`.
    pub fn new(num: Vec<AgentSet>, sec: Vec<AgentSet>) -> Result<Self> {
        let n = num.len();
        if n == 0 || n > MAX_AGENTS {
            return Err(Error::InvalidGraph(format!(
                "agent count {n} outside 1..={MAX_AGENTS}"
            )));
        }
        if sec.len() != n {
            return Err(Error::InvalidGraph("N and S differ in length".into()));
        }
        let everyone = AgentSet::all(n);
        for a in 0..n {
            let agent = Agent(a as u8);
            if !num[a].is_subset(everyone) || !sec[a].is_subset(everyone) {
                return Err(Error::InvalidGraph(format!(
                    "agent {a} refers to an agent outside 0..{n}"
                )));
            }
            if !sec[a].contains(agent) {
                return Err(Error::InvalidGraph(format!(
                    "agent {a} does not know its own secret"
                )));
            }
            if !sec[a].is_subset(num[a]) {
                return Err(Error::InvalidGraph(format!(
                    "agent {a} knows a secret without the number"
                )));
            }
        }
        Ok(GossipGraph { num, sec })
    }

    /// An initial graph (S is the identity) with the given number edges.
    pub fn initial(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let sec: Vec<AgentSet> = (0..n).map(|a| AgentSet::singleton(Agent(a as u8))).collect();
        let mut num = sec.clone();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::AgentOutOfRange {
                    agent: a.max(b),
                    n,
                });
            }
            num[a].insert(Agent(b as u8));
        }
        GossipGraph::new(num, sec)
    }

    pub fn agent_count(&self) -> usize {
        self.num.len()
    }

    pub fn agents(&self) -> impl Iterator<Item = Agent> {
        (0..self.agent_count()).map(|a| Agent(a as u8))
    }

    pub fn numbers(&self, a: Agent) -> AgentSet {
        self.num[a.index()]
    }

    pub fn secrets(&self, a: Agent) -> AgentSet {
        self.sec[a.index()]
    }

    pub fn knows_number(&self, a: Agent, b: Agent) -> bool {
        self.num[a.index()].contains(b)
    }

    pub fn knows_secret(&self, a: Agent, b: Agent) -> bool {
        self.sec[a.index()].contains(b)
    }

    pub fn is_initial(&self) -> bool {
        self.agents()
            .all(|a| self.sec[a.index()] == AgentSet::singleton(a))
    }

    pub fn is_expert(&self, a: Agent) -> bool {
        self.sec[a.index()] == AgentSet::all(self.agent_count())
    }

    pub fn all_experts(&self) -> bool {
        self.agents().all(|a| self.is_expert(a))
    }

    fn check_call(&self, c: Call) -> Result<()> {
        let n = self.agent_count();
        for a in [c.caller, c.callee] {
            if a.index() >= n {
                return Err(Error::AgentOutOfRange {
                    agent: a.index(),
                    n,
                });
            }
        }
        if c.caller == c.callee {
            return Err(Error::SelfCall(c.caller.index()));
        }
        Ok(())
    }

    /// A call is possible iff the caller knows the callee's number.
    pub fn is_possible(&self, c: Call) -> Result<bool> {
        self.check_call(c)?;
        Ok(self.knows_number(c.caller, c.callee))
    }

    /// Executes a possible call: both parties end up with the union of their
    /// number and secret rows.
    pub fn apply_call(&self, c: Call) -> Result<GossipGraph> {
        if !self.is_possible(c)? {
            return Err(Error::ImpossibleCall {
                call: c.to_string(),
                index: 0,
            });
        }
        Ok(self.apply_unchecked(c))
    }

    pub(crate) fn apply_unchecked(&self, c: Call) -> GossipGraph {
        let mut g = self.clone();
        let (a, b) = (c.caller.index(), c.callee.index());
        let num = self.num[a].union(self.num[b]);
        let sec = self.sec[a].union(self.sec[b]);
        g.num[a] = num;
        g.num[b] = num;
        g.sec[a] = sec;
        g.sec[b] = sec;
        g
    }

    pub fn apply_sequence(&self, seq: &CallSequence) -> Result<GossipGraph> {
        let mut g = self.clone();
        for (index, &c) in seq.calls().iter().enumerate() {
            if !g.is_possible(c)? {
                return Err(Error::ImpossibleCall {
                    call: c.to_string(),
                    index,
                });
            }
            g = g.apply_unchecked(c);
        }
        Ok(g)
    }

    /// Relabels every agent `a` as `perm(a)`.
    pub fn permute(&self, perm: &Permutation) -> Result<GossipGraph> {
        let n = self.agent_count();
        if perm.len() != n {
            return Err(Error::NotAPermutation {
                n,
                detail: format!("permutation has {} entries", perm.len()),
            });
        }
        let mut num = vec![AgentSet::EMPTY; n];
        let mut sec = vec![AgentSet::EMPTY; n];
        for a in self.agents() {
            let ja = perm.apply(a).index();
            num[ja] = self.num[a.index()].iter().map(|b| perm.apply(b)).collect();
            sec[ja] = self.sec[a.index()].iter().map(|b| perm.apply(b)).collect();
        }
        Ok(GossipGraph { num, sec })
    }

    /// A random initial graph: every off-diagonal number edge is present
    /// independently with probability `p`. Deterministic in `seed`.
    pub fn random(n: usize, seed: u64, p: f64) -> Result<GossipGraph> {
        if n == 0 || n > MAX_AGENTS {
            return Err(Error::InvalidGraph(format!(
                "agent count {n} outside 1..={MAX_AGENTS}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.gen_bool(p.clamp(0.0, 1.0)) {
                    edges.push((a, b));
                }
            }
        }
        GossipGraph::initial(n, &edges)
    }
}

impl fmt::Display for GossipGraph {
    /// One token per agent; a letter per known number, upper case when the
    /// secret is known too.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.agents() {
            if a.0 > 0 {
                f.write_str(" ")?;
            }
            for b in self.num[a.index()].iter() {
                let upper = self.sec[a.index()].contains(b);
                write!(f, "{}", b.letter(upper))?;
            }
        }
        Ok(())
    }
}

impl FromStr for GossipGraph {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens: Vec<&str> = s.split_whitespace().collect();
        let n = tokens.len();
        if n == 0 || n > MAX_AGENTS {
            return Err(Error::InvalidGraph(format!(
                "expected 1..={MAX_AGENTS} agent tokens, got {n}"
            )));
        }
        let mut num = vec![AgentSet::EMPTY; n];
        let mut sec = vec![AgentSet::EMPTY; n];
        for (a, tok) in tokens.iter().enumerate() {
            let mut last: Option<u8> = None;
            for c in tok.chars() {
                if !c.is_ascii_alphabetic() {
                    return Err(Error::InvalidGraph(format!(
                        "agent {a}: unexpected character `{c}`"
                    )));
                }
                let b = c.to_ascii_lowercase() as u8 - b'a';
                if b as usize >= n {
                    return Err(Error::InvalidGraph(format!(
                        "agent {a}: letter `{c}` names an agent outside 0..{n}"
                    )));
                }
                if last.is_some_and(|l| l >= b) {
                    return Err(Error::InvalidGraph(format!(
                        "agent {a}: letters must be strictly ascending"
                    )));
                }
                last = Some(b);
                num[a].insert(Agent(b));
                if c.is_ascii_uppercase() {
                    sec[a].insert(Agent(b));
                }
            }
        }
        GossipGraph::new(num, sec)
    }
}

/// A bijection on `0..n`, stored as the image of each agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<u8>);

impl Permutation {
    pub fn new(image: Vec<usize>) -> Result<Self> {
        let n = image.len();
        let mut seen = vec![false; n];
        for &i in &image {
            if i >= n || seen[i] {
                return Err(Error::NotAPermutation {
                    n,
                    detail: format!("{image:?}"),
                });
            }
            seen[i] = true;
        }
        Ok(Permutation(image.into_iter().map(|i| i as u8).collect()))
    }

    pub fn identity(n: usize) -> Self {
        Permutation((0..n as u8).collect())
    }

    /// Swaps the agents in each pair, fixing every other agent.
    pub fn swaps(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut image: Vec<usize> = (0..n).collect();
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::AgentOutOfRange { agent: a.max(b), n });
            }
            image.swap(a, b);
        }
        Permutation::new(image)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, a: Agent) -> Agent {
        Agent(self.0[a.index()])
    }

    pub fn apply_call(&self, c: Call) -> Call {
        Call {
            caller: self.apply(c.caller),
            callee: self.apply(c.callee),
        }
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0u8; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j as usize] = i as u8;
        }
        Permutation(inv)
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &Permutation) -> Permutation {
        Permutation(first.0.iter().map(|&i| self.0[i as usize]).collect())
    }

    /// Every permutation of `0..n` in lexicographic order.
    pub fn all(n: usize) -> Vec<Permutation> {
        fn go(cur: &mut Vec<u8>, used: &mut [bool], out: &mut Vec<Permutation>) {
            if cur.len() == used.len() {
                out.push(Permutation(cur.clone()));
                return;
            }
            for i in 0..used.len() {
                if !used[i] {
                    used[i] = true;
                    cur.push(i as u8);
                    go(cur, used, out);
                    cur.pop();
                    used[i] = false;
                }
            }
        }
        let mut out = Vec::new();
        go(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
        out
    }
}

/// An initial graph together with a history that is possible on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipState {
    initial: GossipGraph,
    history: CallSequence,
    current: GossipGraph,
}

impl GossipState {
    pub fn new(initial: GossipGraph) -> Self {
        GossipState {
            current: initial.clone(),
            initial,
            history: CallSequence::empty(),
        }
    }

    pub fn with_history(initial: GossipGraph, history: CallSequence) -> Result<Self> {
        let current = initial.apply_sequence(&history)?;
        Ok(GossipState {
            initial,
            history,
            current,
        })
    }

    pub fn call(&self, c: Call) -> Result<Self> {
        let current = self.current.apply_call(c).map_err(|e| match e {
            Error::ImpossibleCall { call, .. } => Error::ImpossibleCall {
                call,
                index: self.history.len(),
            },
            e => e,
        })?;
        Ok(GossipState {
            initial: self.initial.clone(),
            history: self.history.extended(c),
            current,
        })
    }

    pub fn initial(&self) -> &GossipGraph {
        &self.initial
    }

    pub fn history(&self) -> &CallSequence {
        &self.history
    }

    pub fn current(&self) -> &GossipGraph {
        &self.current
    }
}
