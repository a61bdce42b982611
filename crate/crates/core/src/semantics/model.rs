use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};
use crate::graph::{Agent, AgentSet, Call, CallSequence, GossipGraph};
use crate::logic::{derived, Formula, Program, Term};
use crate::registry::{ProtocolId, ProtocolKind, Registry, SemanticRule};

use super::tree::{Level, Tree};

/// Histories explored so far, as nodes of a trie rooted at `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub u32);

impl StateId {
    pub const ROOT: StateId = StateId(0);

    fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ProgId(u32);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Node {
    Top,
    Num(u8, u8),
    Sec(u8, u8),
    Not(NodeId),
    And(Arc<[NodeId]>),
    Knows(u8, ProtocolId, NodeId),
    Box(ProgId, NodeId),
    /// `[P]φ` for a protocol program, evaluated by memoised recursion.
    BoxProtocol(ProtocolId, NodeId),
    Cond(ProtocolId, u8, u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Prog {
    Test(NodeId),
    Call(u8, u8),
    Seq(Arc<[ProgId]>),
    Choice(Arc<[ProgId]>),
    Star(ProgId),
    Protocol(ProtocolId),
}

/// Parent class, and the call with the partner's rows when the agent took part.
type CellKey = (u32, Option<(Call, AgentSet, AgentSet)>);

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Maximal number of star iterations and of protocol steps explored
    /// from one state. `None` means `n(n-1)`.
    pub star_budget: Option<usize>,
    /// Maximal number of distinct histories held by the model.
    pub history_budget: usize,
    /// Memoise truth values and protocol conditions.
    pub caching: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            star_budget: None,
            history_budget: 10_000_000,
            caching: true,
        }
    }
}

/// Evaluation context for one initial graph: the history trie, compiled
/// formulas, execution trees per protocol, and caches.
///
/// The model owns its registry. Protocols registered through
/// [`Model::registry_mut`] or [`Model::resolve`] are visible to later
/// evaluations.
pub struct Model {
    registry: Registry,
    initial: GossipGraph,
    n: usize,
    config: ModelConfig,
    star_budget: usize,
    calls: Vec<Call>,

    rows: Vec<AgentSet>,
    parent: Vec<u32>,
    last: Vec<Call>,
    depth: Vec<u32>,
    child_index: FxHashMap<(u32, Call), u32>,

    nodes: Vec<Node>,
    node_ids: FxHashMap<Node, NodeId>,
    progs: Vec<Prog>,
    prog_ids: FxHashMap<Prog, ProgId>,
    cond_nodes: FxHashMap<(ProtocolId, Call), NodeId>,
    success_nodes: FxHashMap<ProtocolId, NodeId>,

    truth: FxHashMap<(NodeId, StateId), bool>,
    conds: FxHashMap<(ProtocolId, StateId, Call), bool>,
    trees: FxHashMap<ProtocolId, Tree>,
    building: FxHashSet<ProtocolId>,
    limits: FxHashMap<ProtocolId, ProtocolId>,
}

impl Model {
    pub fn new(initial: GossipGraph, registry: Registry) -> Self {
        Model::with_config(initial, registry, ModelConfig::default())
    }

    pub fn with_config(initial: GossipGraph, registry: Registry, config: ModelConfig) -> Self {
        let n = initial.agent_count();
        let star_budget = config.star_budget.unwrap_or(n * (n - 1));
        let mut rows = Vec::with_capacity(2 * n);
        for a in initial.agents() {
            rows.push(initial.numbers(a));
        }
        for a in initial.agents() {
            rows.push(initial.secrets(a));
        }
        Model {
            registry,
            n,
            config,
            star_budget,
            calls: Call::all(n),
            rows,
            parent: vec![u32::MAX],
            last: vec![Call {
                caller: Agent(0),
                callee: Agent(0),
            }],
            depth: vec![0],
            child_index: FxHashMap::default(),
            nodes: Vec::new(),
            node_ids: FxHashMap::default(),
            progs: Vec::new(),
            prog_ids: FxHashMap::default(),
            cond_nodes: FxHashMap::default(),
            success_nodes: FxHashMap::default(),
            truth: FxHashMap::default(),
            conds: FxHashMap::default(),
            trees: FxHashMap::default(),
            building: FxHashSet::default(),
            limits: FxHashMap::default(),
            initial,
        }
    }

    pub fn initial(&self) -> &GossipGraph {
        &self.initial
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut Registry {
        &mut self.registry
    }

    pub fn resolve(&mut self, name: &str) -> Result<ProtocolId> {
        self.registry.resolve(name)
    }

    pub fn star_budget(&self) -> usize {
        self.star_budget
    }

    pub fn protocol_name(&self, p: ProtocolId) -> &str {
        self.registry.name(p)
    }

    // ---- states ----

    pub fn num(&self, s: StateId, a: Agent) -> AgentSet {
        self.rows[s.index() * 2 * self.n + a.index()]
    }

    pub fn sec(&self, s: StateId, a: Agent) -> AgentSet {
        self.rows[s.index() * 2 * self.n + self.n + a.index()]
    }

    pub fn depth(&self, s: StateId) -> usize {
        self.depth[s.index()] as usize
    }

    pub fn state_count(&self) -> usize {
        self.depth.len()
    }

    pub fn is_possible(&self, s: StateId, c: Call) -> bool {
        self.num(s, c.caller).contains(c.callee)
    }

    pub fn all_experts(&self, s: StateId) -> bool {
        let all = AgentSet::all(self.n);
        (0..self.n).all(|a| self.sec(s, Agent::from(a)) == all)
    }

    pub fn graph(&self, s: StateId) -> GossipGraph {
        let base = s.index() * 2 * self.n;
        GossipGraph::new(
            self.rows[base..base + self.n].to_vec(),
            self.rows[base + self.n..base + 2 * self.n].to_vec(),
        )
        .expect("model states satisfy the graph invariants")
    }

    pub fn last_call(&self, s: StateId) -> Option<Call> {
        (s != StateId::ROOT).then(|| self.last[s.index()])
    }

    pub fn parent(&self, s: StateId) -> Option<StateId> {
        (s != StateId::ROOT).then(|| StateId(self.parent[s.index()]))
    }

    pub fn history(&self, s: StateId) -> CallSequence {
        let mut calls = Vec::with_capacity(self.depth(s));
        let mut cur = s;
        while let Some(p) = self.parent(cur) {
            calls.push(self.last[cur.index()]);
            cur = p;
        }
        calls.reverse();
        CallSequence(calls)
    }

    /// The state reached by a possible call.
    pub fn child(&mut self, s: StateId, c: Call) -> Result<StateId> {
        if let Some(&t) = self.child_index.get(&(s.0, c)) {
            return Ok(StateId(t));
        }
        debug_assert!(self.is_possible(s, c));
        if self.depth.len() >= self.config.history_budget {
            return Err(Error::BudgetExceeded {
                protocol: "state space".into(),
                detail: format!("more than {} histories", self.config.history_budget),
            });
        }
        let n = self.n;
        let base = s.index() * 2 * n;
        let (a, b) = (c.caller.index(), c.callee.index());
        let num = self.rows[base + a].union(self.rows[base + b]);
        let sec = self.rows[base + n + a].union(self.rows[base + n + b]);
        let t = StateId(self.depth.len() as u32);
        self.rows.extend_from_within(base..base + 2 * n);
        let nb = t.index() * 2 * n;
        self.rows[nb + a] = num;
        self.rows[nb + b] = num;
        self.rows[nb + n + a] = sec;
        self.rows[nb + n + b] = sec;
        self.parent.push(s.0);
        self.last.push(c);
        self.depth.push(self.depth[s.index()] + 1);
        self.child_index.insert((s.0, c), t.0);
        Ok(t)
    }

    /// The state of a history, checking that every call is possible.
    pub fn state_of(&mut self, history: &CallSequence) -> Result<StateId> {
        let mut s = StateId::ROOT;
        for (index, &c) in history.calls().iter().enumerate() {
            for a in [c.caller, c.callee] {
                if a.index() >= self.n {
                    return Err(Error::AgentOutOfRange {
                        agent: a.index(),
                        n: self.n,
                    });
                }
            }
            if !self.is_possible(s, c) {
                return Err(Error::ImpossibleCall {
                    call: c.to_string(),
                    index,
                });
            }
            s = self.child(s, c)?;
        }
        Ok(s)
    }

    // ---- compilation ----

    fn intern(&mut self, node: Node) -> NodeId {
        if let Some(&id) = self.node_ids.get(&node) {
            return id;
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(node.clone());
        self.node_ids.insert(node, id);
        id
    }

    fn intern_prog(&mut self, prog: Prog) -> ProgId {
        if let Some(&id) = self.prog_ids.get(&prog) {
            return id;
        }
        let id = ProgId(self.progs.len() as u32);
        self.progs.push(prog.clone());
        self.prog_ids.insert(prog, id);
        id
    }

    fn agent_of(&self, t: Term) -> Result<u8> {
        match t {
            Term::Agent(a) if a.index() < self.n => Ok(a.0),
            Term::Agent(a) => Err(Error::AgentOutOfRange {
                agent: a.index(),
                n: self.n,
            }),
            Term::Var(v) => Err(Error::FreeVariable(v.to_string())),
            Term::Caller => Err(Error::FreeVariable("a (caller)".into())),
            Term::Callee => Err(Error::FreeVariable("b (callee)".into())),
        }
    }

    /// Compiles a closed formula for this model's agent count.
    pub fn compile(&mut self, f: &Formula) -> Result<NodeId> {
        let expanded = f.expand(self.n)?;
        self.compile_expanded(&expanded)
    }

    fn compile_expanded(&mut self, f: &Formula) -> Result<NodeId> {
        let node = match f {
            Formula::Top => Node::Top,
            Formula::Num(x, y) => Node::Num(self.agent_of(*x)?, self.agent_of(*y)?),
            Formula::Sec(x, y) => Node::Sec(self.agent_of(*x)?, self.agent_of(*y)?),
            Formula::Not(g) => Node::Not(self.compile_expanded(g)?),
            Formula::And(gs) => {
                let mut ids = Vec::with_capacity(gs.len());
                for g in gs {
                    ids.push(self.compile_expanded(g)?);
                }
                Node::And(ids.into())
            }
            Formula::Knows(a, p, g) => {
                self.registry.try_get(*p)?;
                Node::Knows(self.agent_of(*a)?, *p, self.compile_expanded(g)?)
            }
            Formula::Box(prog, g) => {
                let body = self.compile_expanded(g)?;
                if let Program::Protocol(p) = **prog {
                    self.registry.try_get(p)?;
                    Node::BoxProtocol(p, body)
                } else {
                    Node::Box(self.compile_program(prog)?, body)
                }
            }
            Formula::Cond(p, x, y) => {
                self.registry.try_get(*p)?;
                let (x, y) = (self.agent_of(*x)?, self.agent_of(*y)?);
                if x == y {
                    return Err(Error::SelfCall(x as usize));
                }
                Node::Cond(*p, x, y)
            }
            Formula::Ex(_) | Formula::Forall(..) | Formula::Exists(..) => {
                unreachable!("expanded formulas have no macros or quantifiers")
            }
        };
        Ok(self.intern(node))
    }

    fn compile_program(&mut self, p: &Program) -> Result<ProgId> {
        let prog = match p {
            Program::Test(f) => Prog::Test(self.compile_expanded(f)?),
            Program::Call(x, y) => {
                let (x, y) = (self.agent_of(*x)?, self.agent_of(*y)?);
                if x == y {
                    return Err(Error::SelfCall(x as usize));
                }
                Prog::Call(x, y)
            }
            Program::Seq(ps) | Program::Choice(ps) => {
                let mut ids = Vec::with_capacity(ps.len());
                for q in ps {
                    ids.push(self.compile_program(q)?);
                }
                if matches!(p, Program::Seq(_)) {
                    Prog::Seq(ids.into())
                } else {
                    Prog::Choice(ids.into())
                }
            }
            Program::Star(q) => Prog::Star(self.compile_program(q)?),
            Program::Protocol(id) => {
                self.registry.try_get(*id)?;
                Prog::Protocol(*id)
            }
        };
        Ok(self.intern_prog(prog))
    }

    fn cond_node(&mut self, p: ProtocolId, c: Call) -> Result<NodeId> {
        if let Some(&id) = self.cond_nodes.get(&(p, c)) {
            return Ok(id);
        }
        let template = match &self.registry.try_get(p)?.kind {
            ProtocolKind::Syntactic(t) => t.clone(),
            ProtocolKind::Semantic(_) => unreachable!("only templates compile to nodes"),
        };
        let f = template.substitute(Term::Agent(c.caller), Term::Agent(c.callee));
        let id = self.compile(&f)?;
        self.cond_nodes.insert((p, c), id);
        Ok(id)
    }

    /// `⟨P⟩Ex`.
    fn success_node(&mut self, p: ProtocolId) -> NodeId {
        if let Some(&id) = self.success_nodes.get(&p) {
            return id;
        }
        let ex = self
            .compile_expanded(&derived::ex(self.n))
            .expect("Ex compiles");
        let not_ex = self.intern(Node::Not(ex));
        let boxed = self.intern(Node::BoxProtocol(p, not_ex));
        let id = self.intern(Node::Not(boxed));
        self.success_nodes.insert(p, id);
        id
    }

    // ---- evaluation ----

    /// Truth of a closed formula after a possible history.
    pub fn eval(&mut self, f: &Formula, history: &CallSequence) -> Result<bool> {
        let s = self.state_of(history)?;
        self.eval_at(f, s)
    }

    pub fn eval_at(&mut self, f: &Formula, s: StateId) -> Result<bool> {
        let node = self.compile(f)?;
        self.eval_node(node, s)
    }

    pub fn eval_node(&mut self, id: NodeId, s: StateId) -> Result<bool> {
        let node = self.nodes[id.0 as usize].clone();
        let cacheable = self.config.caching
            && !matches!(node, Node::Top | Node::Num(..) | Node::Sec(..) | Node::Not(_));
        if cacheable {
            if let Some(&v) = self.truth.get(&(id, s)) {
                return Ok(v);
            }
        }
        let v = match node {
            Node::Top => true,
            Node::Num(x, y) => self.num(s, Agent(x)).contains(Agent(y)),
            Node::Sec(x, y) => self.sec(s, Agent(x)).contains(Agent(y)),
            Node::Not(g) => !self.eval_node(g, s)?,
            Node::And(gs) => {
                let mut all = true;
                for &g in gs.iter() {
                    if !self.eval_node(g, s)? {
                        all = false;
                        break;
                    }
                }
                all
            }
            Node::Knows(a, p, g) => match self.cell(p, Agent(a), s)? {
                None => true,
                Some(cell) => {
                    let mut all = true;
                    for &t in cell.iter() {
                        if !self.eval_node(g, t)? {
                            all = false;
                            break;
                        }
                    }
                    all
                }
            },
            Node::Box(prog, g) => {
                let mut all = true;
                for t in self.run(prog, s)? {
                    if !self.eval_node(g, t)? {
                        all = false;
                        break;
                    }
                }
                all
            }
            Node::BoxProtocol(p, g) => self.box_protocol(id, p, g, s, 0)?,
            Node::Cond(p, x, y) => self.condition(
                p,
                s,
                Call {
                    caller: Agent(x),
                    callee: Agent(y),
                },
            )?,
        };
        if cacheable {
            self.truth.insert((id, s), v);
        }
        Ok(v)
    }

    fn budget_error(&self, p: ProtocolId, what: &str) -> Error {
        Error::BudgetExceeded {
            protocol: self.registry.name(p).to_string(),
            detail: format!("{what} exceeds the star budget of {}", self.star_budget),
        }
    }

    fn box_protocol(
        &mut self,
        id: NodeId,
        p: ProtocolId,
        body: NodeId,
        s: StateId,
        steps: usize,
    ) -> Result<bool> {
        if steps > 0 && self.config.caching {
            if let Some(&v) = self.truth.get(&(id, s)) {
                return Ok(v);
            }
        }
        if steps > self.star_budget {
            return Err(self.budget_error(p, "protocol run"));
        }
        let mut terminal = true;
        let mut all = true;
        for i in 0..self.calls.len() {
            let c = self.calls[i];
            if !self.permitted(p, s, c)? {
                continue;
            }
            terminal = false;
            let t = self.child(s, c)?;
            if !self.box_protocol(id, p, body, t, steps + 1)? {
                all = false;
                break;
            }
        }
        let v = if terminal { self.eval_node(body, s)? } else { all };
        if steps > 0 && self.config.caching {
            self.truth.insert((id, s), v);
        }
        Ok(v)
    }

    fn run(&mut self, prog: ProgId, s: StateId) -> Result<Vec<StateId>> {
        let p = self.progs[prog.0 as usize].clone();
        let mut out = match p {
            Prog::Test(f) => {
                if self.eval_node(f, s)? {
                    vec![s]
                } else {
                    vec![]
                }
            }
            Prog::Call(x, y) => {
                let c = Call {
                    caller: Agent(x),
                    callee: Agent(y),
                };
                if self.is_possible(s, c) {
                    vec![self.child(s, c)?]
                } else {
                    vec![]
                }
            }
            Prog::Seq(parts) => {
                let mut cur = vec![s];
                for &q in parts.iter() {
                    let mut next = Vec::new();
                    for t in cur {
                        next.extend(self.run(q, t)?);
                    }
                    next.sort_unstable();
                    next.dedup();
                    cur = next;
                }
                cur
            }
            Prog::Choice(parts) => {
                let mut all = Vec::new();
                for &q in parts.iter() {
                    all.extend(self.run(q, s)?);
                }
                all
            }
            Prog::Star(q) => {
                let mut reached: FxHashSet<StateId> = FxHashSet::default();
                reached.insert(s);
                let mut frontier = vec![s];
                let mut rounds = 0;
                while !frontier.is_empty() {
                    let mut next = Vec::new();
                    for t in frontier {
                        for u in self.run(q, t)? {
                            if reached.insert(u) {
                                next.push(u);
                            }
                        }
                    }
                    if !next.is_empty() {
                        rounds += 1;
                        if rounds > self.star_budget {
                            return Err(Error::BudgetExceeded {
                                protocol: "star".into(),
                                detail: format!(
                                    "more than {} iterations",
                                    self.star_budget
                                ),
                            });
                        }
                    }
                    frontier = next;
                }
                reached.into_iter().collect()
            }
            Prog::Protocol(p) => self.protocol_terminals_from(p, s)?,
        };
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Terminal states reachable from `s` by permitted calls of `p`.
    fn protocol_terminals_from(&mut self, p: ProtocolId, s: StateId) -> Result<Vec<StateId>> {
        let mut out = Vec::new();
        let mut stack = vec![(s, 0usize)];
        while let Some((t, steps)) = stack.pop() {
            if steps > self.star_budget {
                return Err(self.budget_error(p, "protocol run"));
            }
            let next = self.permitted_calls(p, t)?;
            if next.is_empty() {
                out.push(t);
            }
            for c in next.into_iter().rev() {
                let u = self.child(t, c)?;
                stack.push((u, steps + 1));
            }
        }
        Ok(out)
    }

    /// States related to `s` by a program.
    pub fn eval_program(&mut self, prog: &Program, history: &CallSequence) -> Result<Vec<CallSequence>> {
        let s = self.state_of(history)?;
        let expanded = Formula::boxed(prog.clone(), Formula::Top).expand(self.n)?;
        let Formula::Box(prog, _) = expanded else {
            unreachable!()
        };
        let id = self.compile_program(&prog)?;
        let mut out: Vec<CallSequence> = self.run(id, s)?.into_iter().map(|t| self.history(t)).collect();
        out.sort();
        Ok(out)
    }

    // ---- protocols ----

    /// The protocol condition `P_ab` at `s`. For semantic protocols this
    /// requires `s` to be in the extension.
    pub fn condition(&mut self, p: ProtocolId, s: StateId, c: Call) -> Result<bool> {
        if self.config.caching {
            if let Some(&v) = self.conds.get(&(p, s, c)) {
                return Ok(v);
            }
        }
        let v = if self.registry.try_get(p)?.is_syntactic() {
            let node = self.cond_node(p, c)?;
            self.eval_node(node, s)?
        } else {
            self.is_member(p, s)? && self.is_possible(s, c) && self.rule_allows(p, s, c)?
        };
        if self.config.caching {
            self.conds.insert((p, s, c), v);
        }
        Ok(v)
    }

    /// `N_ab ∧ P_ab` at `s`.
    pub fn permitted(&mut self, p: ProtocolId, s: StateId, c: Call) -> Result<bool> {
        Ok(self.is_possible(s, c) && self.condition(p, s, c)?)
    }

    pub fn permitted_calls(&mut self, p: ProtocolId, s: StateId) -> Result<Vec<Call>> {
        let mut out = Vec::new();
        for i in 0..self.calls.len() {
            let c = self.calls[i];
            if self.permitted(p, s, c)? {
                out.push(c);
            }
        }
        Ok(out)
    }

    /// Permission of a possible call at a state known to be in the
    /// extension.
    fn allows_member(&mut self, p: ProtocolId, s: StateId, c: Call) -> Result<bool> {
        if self.registry.get(p).is_syntactic() {
            self.condition(p, s, c)
        } else {
            if self.config.caching {
                if let Some(&v) = self.conds.get(&(p, s, c)) {
                    return Ok(v);
                }
            }
            let v = self.rule_allows(p, s, c)?;
            if self.config.caching {
                self.conds.insert((p, s, c), v);
            }
            Ok(v)
        }
    }

    fn rule_allows(&mut self, p: ProtocolId, s: StateId, c: Call) -> Result<bool> {
        let rule = match &self.registry.get(p).kind {
            ProtocolKind::Semantic(rule) => rule.clone(),
            ProtocolKind::Syntactic(_) => unreachable!(),
        };
        match rule {
            SemanticRule::CallOnce => {
                let history = self.history(s);
                let reversed = Call {
                    caller: c.callee,
                    callee: c.caller,
                };
                Ok(!history.calls().iter().any(|&d| d == c || d == reversed))
            }
            SemanticRule::DiamondStages => {
                let history = self.history(s);
                Ok(crate::protocol::builtins::diamond_stage_allows(
                    &self.initial,
                    history.calls(),
                    c,
                ))
            }
            SemanticRule::Custom(pred) => {
                let history = self.history(s);
                Ok(pred(&self.initial, history.calls(), c))
            }
            SemanticRule::Defoliation { base, hard } => {
                if !self.permitted(base, s, c)? {
                    return Ok(false);
                }
                let Some(cell) = self.cell(base, c.caller, s)? else {
                    return Ok(false);
                };
                for &t in cell.iter() {
                    let ok = if !self.permitted(base, t, c)? {
                        true
                    } else {
                        let u = self.child(t, c)?;
                        self.all_experts(u) || !self.permitted_calls(base, u)?.is_empty()
                    };
                    if hard && !ok {
                        return Ok(false);
                    }
                    if !hard && ok {
                        return Ok(true);
                    }
                }
                Ok(hard)
            }
            SemanticRule::LookAhead { base, hard } => {
                if !self.permitted(base, s, c)? {
                    return Ok(false);
                }
                let Some(cell) = self.cell(base, c.caller, s)? else {
                    return Ok(false);
                };
                let success = self.success_node(base);
                for &t in cell.iter() {
                    let u = self.child(t, c)?;
                    let ok = self.eval_node(success, u)?;
                    if hard && !ok {
                        return Ok(false);
                    }
                    if !hard && ok {
                        return Ok(true);
                    }
                }
                Ok(hard)
            }
            SemanticRule::Limit { .. } => {
                let target = self.limit_target(p)?;
                self.condition(target, s, c)
            }
        }
    }

    /// The iterate at which a limit protocol stabilises on this graph.
    pub fn limit_target(&mut self, p: ProtocolId) -> Result<ProtocolId> {
        if let Some(&t) = self.limits.get(&p) {
            return Ok(t);
        }
        let (base, kind) = match &self.registry.get(p).kind {
            ProtocolKind::Semantic(SemanticRule::Limit { base, kind }) => (*base, *kind),
            _ => return Err(Error::Input(format!("`{}` is not a limit", self.registry.name(p)))),
        };
        let cap = self.tree(base)?.size() + 1;
        let mut cur = base;
        for _ in 0..=cap {
            let next = crate::strengthening::strengthen(&mut self.registry, cur, kind)?;
            if self.terminals(cur)? == self.terminals(next)? {
                self.limits.insert(p, cur);
                return Ok(cur);
            }
            cur = next;
        }
        Err(Error::BudgetExceeded {
            protocol: self.registry.name(p).to_string(),
            detail: format!("no fixpoint after {cap} rounds"),
        })
    }

    // ---- execution trees ----

    pub fn is_member(&mut self, p: ProtocolId, s: StateId) -> Result<bool> {
        self.ensure_level(p, self.depth(s))?;
        Ok(self.trees[&p].contains(s))
    }

    /// The `~_a^P` cell of `s`, or `None` when `s` is not `P`-permitted.
    pub fn cell(&mut self, p: ProtocolId, a: Agent, s: StateId) -> Result<Option<Arc<[StateId]>>> {
        self.ensure_level(p, self.depth(s))?;
        Ok(self.trees[&p].cell(a.index(), s).cloned())
    }

    /// The tree of `p` with at least `depth + 1` levels (fewer when the
    /// extension is shorter), children known for levels below `depth`.
    pub fn tree_to_depth(&mut self, p: ProtocolId, depth: usize) -> Result<&Tree> {
        self.ensure_level(p, depth)?;
        Ok(&self.trees[&p])
    }

    /// The complete execution tree of `p`.
    pub fn tree(&mut self, p: ProtocolId) -> Result<&Tree> {
        self.registry.try_get(p)?;
        loop {
            let n = self.n;
            let tree = self.trees.entry(p).or_insert_with(|| root_tree(n));
            if tree.complete {
                break;
            }
            if tree.levels.len() > self.star_budget + 1 {
                return Err(self.budget_error(p, "extension depth"));
            }
            self.grow(p)?;
        }
        Ok(&self.trees[&p])
    }

    /// Terminal states of the complete tree, in level order.
    pub fn terminals(&mut self, p: ProtocolId) -> Result<Vec<StateId>> {
        let mut t = self.tree(p)?.terminals();
        t.sort_unstable();
        Ok(t)
    }

    fn ensure_level(&mut self, p: ProtocolId, depth: usize) -> Result<()> {
        self.registry.try_get(p)?;
        loop {
            let n = self.n;
            let tree = self.trees.entry(p).or_insert_with(|| root_tree(n));
            if tree.complete || tree.levels.len() > depth {
                return Ok(());
            }
            self.grow(p)?;
        }
    }

    fn grow(&mut self, p: ProtocolId) -> Result<()> {
        if !self.building.insert(p) {
            return Err(Error::Stratification(self.registry.name(p).to_string()));
        }
        let mut tree = self.trees.remove(&p).unwrap_or_else(|| root_tree(self.n));
        let result = self.grow_tree(p, &mut tree);
        self.building.remove(&p);
        self.trees.insert(p, tree);
        result
    }

    fn grow_tree(&mut self, p: ProtocolId, tree: &mut Tree) -> Result<()> {
        let last = tree.levels.len() - 1;
        let states = tree.levels[last].states.clone();
        let mut next = Level::default();
        let mut child_start = Vec::with_capacity(states.len() + 1);
        for (i, &s) in states.iter().enumerate() {
            child_start.push(next.states.len() as u32);
            for k in 0..self.calls.len() {
                let c = self.calls[k];
                if self.is_possible(s, c) && self.allows_member(p, s, c)? {
                    next.states.push(self.child(s, c)?);
                    next.parent.push(i as u32);
                }
            }
        }
        child_start.push(next.states.len() as u32);
        tree.levels[last].child_start = child_start;
        if next.states.is_empty() {
            tree.complete = true;
            return Ok(());
        }
        if tree.index.len() + next.states.len() > self.config.history_budget {
            return Err(Error::BudgetExceeded {
                protocol: self.registry.name(p).to_string(),
                detail: format!("more than {} histories", self.config.history_budget),
            });
        }

        // Refine the previous partition: a child's class is fixed by its
        // parent's class and, when the agent took part in the call, the
        // call and the partner's rows before it.
        let prev = &tree.levels[last];
        for a in 0..self.n {
            let agent = Agent::from(a);
            let mut keys: FxHashMap<CellKey, u32> = FxHashMap::default();
            let mut class = Vec::with_capacity(next.states.len());
            let mut members: Vec<Vec<StateId>> = Vec::new();
            for (j, &t) in next.states.iter().enumerate() {
                let pi = next.parent[j] as usize;
                let ps = prev.states[pi];
                let c = self.last[t.index()];
                let obs = c.involves(agent).then(|| {
                    let partner = if c.caller == agent { c.callee } else { c.caller };
                    (c, self.num(ps, partner), self.sec(ps, partner))
                });
                let key = (prev.class[a][pi], obs);
                let fresh = members.len() as u32;
                let k = *keys.entry(key).or_insert(fresh);
                if k == fresh {
                    members.push(Vec::new());
                }
                members[k as usize].push(t);
                class.push(k);
            }
            next.class.push(class);
            next.cells.push(members.into_iter().map(Arc::from).collect());
        }
        let depth = tree.levels.len() as u32;
        for (j, &t) in next.states.iter().enumerate() {
            tree.index.insert(t, (depth, j as u32));
        }
        tree.levels.push(next);
        Ok(())
    }

    /// Drops memoised truth values; trees and compiled formulas stay.
    pub fn clear_caches(&mut self) {
        self.truth.clear();
        self.conds.clear();
    }
}

fn root_tree(n: usize) -> Tree {
    let mut index = FxHashMap::default();
    index.insert(StateId::ROOT, (0, 0));
    Tree {
        levels: vec![Level {
            states: vec![StateId::ROOT],
            parent: vec![0],
            child_start: Vec::new(),
            class: vec![vec![0]; n],
            cells: vec![vec![Arc::from(vec![StateId::ROOT])]; n],
        }],
        index,
        complete: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::parse_formula_with;

    fn three() -> Model {
        Model::new("Ab Bc bC".parse().unwrap(), Registry::new())
    }

    fn holds(m: &mut Model, text: &str, history: &str) -> bool {
        let f = parse_formula_with(text, &mut |h| m.registry_mut().resolve(h)).unwrap();
        m.eval(&f, &history.parse().unwrap()).unwrap()
    }

    fn histories(m: &Model, states: &[StateId]) -> Vec<String> {
        let mut v: Vec<String> = states.iter().map(|&s| m.history(s).to_string()).collect();
        v.sort();
        v
    }

    #[test]
    fn figure_one_tree() {
        let mut m = three();
        let tree = m.tree(ProtocolId::LNS).unwrap().clone();
        assert_eq!(tree.size(), 12);
        assert_eq!(tree.levels().len(), 4);
        let level1 = &tree.levels()[1];
        let ab: Vec<_> = level1.cells(0).iter().map(|c| histories(&m, c)).collect();
        assert_eq!(ab, vec![vec!["01".to_string()], vec!["12".into(), "21".into()]]);
        let pairs: usize = tree
            .levels()
            .iter()
            .flat_map(|l| l.cells(0))
            .map(|c| c.len() * (c.len() - 1) / 2)
            .sum();
        assert_eq!(pairs, 4);
    }

    #[test]
    fn bullets_at_the_start() {
        let mut m = three();
        assert!(holds(&mut m, "N(0,1) & ~S(0,1)", ""));
        assert!(holds(&mut m, "[12 U 21][LNS] ~Ex", ""));
        assert!(holds(&mut m, "[01][LNS] Ex", ""));
        assert!(!holds(&mut m, "[LNS] Ex", ""));
        assert!(holds(&mut m, "<LNS> Ex", ""));
        assert!(holds(&mut m, "K[0,LNS] Ex & K[1,LNS] Ex & K[2,LNS] Ex", "01;12;02"));
        assert!(holds(&mut m, "K[0,LNS] (S(1,2) & S(2,1))", "12"));
        assert!(holds(&mut m, "K[0] (S(1,2) & S(2,1))", "12"));
    }

    #[test]
    fn knowledge_outside_the_extension_is_vacuous() {
        let mut m = three();
        // 10 is possible after 01 but not LNS-permitted
        assert!(holds(&mut m, "[01;10] K[2,LNS] F", ""));
        assert!(!holds(&mut m, "[01;10] Khat[2,LNS] T", ""));
        assert!(holds(&mut m, "[01] K[2,LNS] ~F", ""));
    }

    #[test]
    fn programs() {
        let mut m = three();
        let eps = CallSequence::empty();
        let prog = |m: &mut Model, t: &str| crate::logic::parse_program(t, m.registry_mut()).unwrap();
        let p = prog(&mut m, "?T");
        assert_eq!(m.eval_program(&p, &eps).unwrap(), vec![eps.clone()]);
        let p = prog(&mut m, "02");
        assert!(m.eval_program(&p, &eps).unwrap().is_empty());
        let p = prog(&mut m, "(?~S(0,1);01 U ?~S(1,2);12)*");
        let got: Vec<String> = m.eval_program(&p, &eps).unwrap().iter().map(|h| h.to_string()).collect();
        assert_eq!(got, ["", "01", "01;12", "12", "12;01"]);
        let p = prog(&mut m, "(01 U 12)*");
        assert!(m.eval_program(&p, &eps).unwrap_err().is_budget());
    }

    #[test]
    fn star_budget_bounds_any() {
        let mut m = three();
        let err = m.tree(ProtocolId::ANY).unwrap_err();
        assert!(err.is_budget());
        let cfg = ModelConfig {
            star_budget: Some(2),
            ..ModelConfig::default()
        };
        let mut m = Model::with_config("Ab Bc bC".parse().unwrap(), Registry::new(), cfg);
        assert_eq!(m.tree_to_depth(ProtocolId::ANY, 2).unwrap().size(), 1 + 3 + 11);
    }

    #[test]
    fn caching_is_transparent() {
        let formulas = [
            "[LNS] Ex",
            "<LNS> Ex",
            "K[0,LNS] <LNS> Ex",
            "[12] Khat[0,LNS] ~Ex",
            "all i. all j!=i. (N(i,j) -> K[i,LNS] N(i,j))",
        ];
        let off = ModelConfig {
            caching: false,
            ..ModelConfig::default()
        };
        for g in ["Ab Bc bC", "A B aC abD", "A B abC abD"] {
            let mut cached = Model::new(g.parse().unwrap(), Registry::new());
            let mut plain = Model::with_config(g.parse().unwrap(), Registry::new(), off.clone());
            let states: Vec<StateId> = cached.tree(ProtocolId::LNS).unwrap().states().collect();
            for text in formulas {
                let f = parse_formula_with(text, &mut |h| cached.registry_mut().resolve(h)).unwrap();
                for &s in &states {
                    let h = cached.history(s);
                    assert_eq!(cached.eval(&f, &h).unwrap(), plain.eval(&f, &h).unwrap(), "{text} at {h}");
                }
            }
        }
    }

    #[test]
    fn state_of_rejects_impossible_histories() {
        let mut m = three();
        assert!(matches!(
            m.state_of(&"02".parse().unwrap()),
            Err(Error::ImpossibleCall { index: 0, .. })
        ));
        let s = m.state_of(&"01;02".parse().unwrap()).unwrap();
        assert_eq!(m.depth(s), 2);
        assert_eq!(m.graph(s).to_string(), "ABC ABc ABC");
    }
}
