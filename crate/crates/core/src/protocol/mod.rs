//! Extensions, success, and the symmetric and epistemic property checks.

pub mod builtins;
mod candy;
mod report;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};
use crate::graph::{Agent, Call, CallSequence, Permutation};
use crate::logic::{Formula, Program};
use crate::registry::ProtocolId;
use crate::semantics::{Model, StateId};

pub use candy::{verify_candy_claims, ClaimResult};
pub use report::{compare, history_text, ComparisonTable, EPSILON};
pub use candy::{CANDY, CANDY_FAILURE, CANDY_SUCCESS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TerminalHistory {
    pub history: CallSequence,
    pub successful: bool,
}

/// The permitted histories of a protocol on a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtensionReport {
    pub graph: crate::graph::GossipGraph,
    pub protocol: String,
    /// Terminal histories in lexicographic order.
    pub terminals: Vec<TerminalHistory>,
    /// The whole prefix-closed extension in lexicographic order.
    pub histories: Vec<CallSequence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Success {
    Strong,
    Weak,
    Unsuccessful,
}

impl ExtensionReport {
    pub fn terminal_count(&self) -> usize {
        self.terminals.len()
    }

    pub fn successful_count(&self) -> usize {
        self.terminals.iter().filter(|t| t.successful).count()
    }

    pub fn unsuccessful_count(&self) -> usize {
        self.terminal_count() - self.successful_count()
    }

    pub fn success(&self) -> Success {
        match self.successful_count() {
            0 => Success::Unsuccessful,
            k if k == self.terminal_count() => Success::Strong,
            _ => Success::Weak,
        }
    }

    pub fn terminal_set(&self) -> FxHashSet<CallSequence> {
        self.terminals.iter().map(|t| t.history.clone()).collect()
    }

    pub fn successful(&self) -> Vec<CallSequence> {
        self.terminals
            .iter()
            .filter(|t| t.successful)
            .map(|t| t.history.clone())
            .collect()
    }

    pub fn unsuccessful(&self) -> Vec<CallSequence> {
        self.terminals
            .iter()
            .filter(|t| !t.successful)
            .map(|t| t.history.clone())
            .collect()
    }
}

pub fn extension(model: &mut Model, p: ProtocolId) -> Result<ExtensionReport> {
    let terminal_states = model.terminals(p)?;
    let all: Vec<StateId> = model.tree(p)?.states().collect();
    let mut terminals: Vec<TerminalHistory> = terminal_states
        .iter()
        .map(|&s| TerminalHistory {
            history: model.history(s),
            successful: model.all_experts(s),
        })
        .collect();
    terminals.sort_by(|a, b| a.history.cmp(&b.history));
    let mut histories: Vec<CallSequence> = all.into_iter().map(|s| model.history(s)).collect();
    histories.sort();
    Ok(ExtensionReport {
        graph: model.initial().clone(),
        protocol: model.protocol_name(p).to_string(),
        terminals,
        histories,
    })
}

/// Strong, weak or no success, from the extension.
pub fn classify_success(model: &mut Model, p: ProtocolId) -> Result<Success> {
    Ok(extension(model, p)?.success())
}

/// The same classification by evaluating `[P]Ex` and `⟨P⟩Ex` at `ε`.
pub fn classify_success_by_formula(model: &mut Model, p: ProtocolId) -> Result<Success> {
    let strong = Formula::boxed(Program::Protocol(p), Formula::Ex(None));
    let weak = Formula::diamond(Program::Protocol(p), Formula::Ex(None));
    let eps = CallSequence::empty();
    Ok(if model.eval(&strong, &eps)? {
        Success::Strong
    } else if model.eval(&weak, &eps)? {
        Success::Weak
    } else {
        Success::Unsuccessful
    })
}

/// Minimal histories whose terminal extensions all agree on success, each
/// with the shared verdict.
pub fn compact_decision_points(report: &ExtensionReport) -> Vec<(CallSequence, bool)> {
    // bit 0: some successful terminal below, bit 1: some unsuccessful
    let mut verdicts: FxHashMap<&[Call], u8> = FxHashMap::default();
    for t in &report.terminals {
        let bit = if t.successful { 1 } else { 2 };
        let calls = t.history.calls();
        for k in 0..=calls.len() {
            *verdicts.entry(&calls[..k]).or_default() |= bit;
        }
    }
    let uniform = |h: &[Call]| matches!(verdicts.get(h), Some(1 | 2));
    let mut out = Vec::new();
    for h in &report.histories {
        let calls = h.calls();
        let parent_uniform = !calls.is_empty() && uniform(&calls[..calls.len() - 1]);
        if uniform(calls) && !parent_uniform {
            out.push((h.clone(), verdicts[calls] == 1));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpistemicWitness {
    /// A history where the call is permitted.
    pub permitted: CallSequence,
    /// An indistinguishable history where it is not.
    pub forbidden: CallSequence,
    pub call: Call,
}

/// Checks that permission of every call is constant on the caller's cells;
/// returns a witness pair otherwise.
pub fn is_epistemic_on(model: &mut Model, p: ProtocolId) -> Result<Option<EpistemicWitness>> {
    let n = model.agent_count();
    let levels: Vec<Vec<Vec<std::sync::Arc<[StateId]>>>> = model
        .tree(p)?
        .levels()
        .iter()
        .map(|l| (0..n).map(|a| l.cells(a).to_vec()).collect())
        .collect();
    for level in levels {
        for (a, cells) in level.into_iter().enumerate() {
            for cell in cells {
                for b in 0..n {
                    if a == b {
                        continue;
                    }
                    let call = Call::new(a, b)?;
                    let mut yes = None;
                    let mut no = None;
                    for &s in cell.iter() {
                        if model.permitted(p, s, call)? {
                            yes.get_or_insert(s);
                        } else {
                            no.get_or_insert(s);
                        }
                    }
                    if let (Some(y), Some(x)) = (yes, no) {
                        return Ok(Some(EpistemicWitness {
                            permitted: model.history(y),
                            forbidden: model.history(x),
                            call,
                        }));
                    }
                }
            }
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetryWitness {
    pub permutation: Permutation,
    /// A history in exactly one of `P(J(G))` and `J(P(G))`.
    pub history: CallSequence,
}

/// Checks `P(J(G)) = J(P(G))` for every permutation `J` of the agents.
pub fn is_symmetric_on(model: &mut Model, p: ProtocolId) -> Result<Option<SymmetryWitness>> {
    let n = model.agent_count();
    if n > 8 {
        return Err(Error::Input(format!("{n}! permutations are too many to enumerate")));
    }
    let base = extension(model, p)?.histories;
    let name = model.protocol_name(p).to_string();
    for perm in Permutation::all(n) {
        let image: FxHashSet<CallSequence> = base.iter().map(|h| h.permute(&perm)).collect();
        let permuted_graph = model.initial().permute(&perm)?;
        let mut other = Model::new(permuted_graph, model.registry().clone());
        let q = other.resolve(&name)?;
        let there = extension(&mut other, q)?.histories;
        let there_set: FxHashSet<&CallSequence> = there.iter().collect();
        let mut diff: Vec<CallSequence> = there
            .iter()
            .filter(|h| !image.contains(*h))
            .cloned()
            .chain(image.iter().filter(|h| !there_set.contains(h)).cloned())
            .collect();
        diff.sort();
        if let Some(history) = diff.into_iter().next() {
            return Ok(Some(SymmetryWitness {
                permutation: perm,
                history,
            }));
        }
    }
    Ok(None)
}

/// Whether every call in every terminal history teaches the caller a new
/// secret.
pub fn has_redundant_calls(report: &ExtensionReport) -> Option<CallSequence> {
    for t in &report.terminals {
        let mut g = report.graph.clone();
        for &c in t.history.calls() {
            if g.knows_secret(c.caller, c.callee) {
                return Some(t.history.clone());
            }
            g = g.apply_call(c).ok()?;
        }
    }
    None
}

/// Agents that ever receive a call in the extension.
pub fn callees(report: &ExtensionReport) -> Vec<Agent> {
    let mut set: Vec<Agent> = report
        .histories
        .iter()
        .flat_map(|h| h.calls().iter().map(|c| c.callee))
        .collect();
    set.sort();
    set.dedup();
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;

    fn model(g: &str) -> Model {
        Model::new(g.parse().unwrap(), Registry::with_builtins())
    }

    fn rows(points: &[(CallSequence, bool)]) -> Vec<String> {
        points
            .iter()
            .map(|(h, ok)| format!("{} {}", history_text(h), if *ok { "✓" } else { "×" }))
            .collect()
    }

    #[test]
    fn n_graph_decision_points() {
        let mut m = model("A B aC abD");
        let r = extension(&mut m, ProtocolId::LNS).unwrap();
        assert_eq!((r.successful_count(), r.unsuccessful_count()), (4, 17));
        assert_eq!(
            rows(&compact_decision_points(&r)),
            ["20 ×", "30;01 ×", "30;20;01 ✓", "30;20;21 ✓", "30;20;31 ×", "30;31 ×", "31 ×"]
        );
    }

    #[test]
    fn strong_success_compacts_to_the_root() {
        let mut m = model("A B abC abD");
        let p = m.resolve(builtins::DIAMOND).unwrap();
        let r = extension(&mut m, p).unwrap();
        assert_eq!(r.success(), Success::Strong);
        assert_eq!(rows(&compact_decision_points(&r)), ["ε ✓"]);
        assert_eq!(classify_success_by_formula(&mut m, p).unwrap(), Success::Strong);
    }

    #[test]
    fn epistemic_witness() {
        let mut m = model("Ab Bc bC");
        assert_eq!(is_epistemic_on(&mut m, ProtocolId::LNS).unwrap(), None);
        let p = builtins::custom(m.registry_mut(), "AfterBc", |_, h, c| match h {
            [] => true,
            [first] => first.to_string() == "12" && c.to_string() == "01",
            _ => false,
        })
        .unwrap();
        let w = is_epistemic_on(&mut m, p).unwrap().unwrap();
        assert_eq!(w.permitted.to_string(), "12");
        assert_eq!(w.forbidden.to_string(), "21");
        assert_eq!(w.call.to_string(), "01");
    }

    #[test]
    fn symmetry_witness() {
        let mut m = model("Ac Bc C");
        assert_eq!(is_symmetric_on(&mut m, ProtocolId::LNS).unwrap(), None);
        let p = builtins::custom(m.registry_mut(), "ZeroOnly", |_, h, c| h.is_empty() && c.caller.0 == 0)
            .unwrap();
        let w = is_symmetric_on(&mut m, p).unwrap().unwrap();
        assert!(w.permutation.apply(Agent(0)) != Agent(0));
    }

    #[test]
    fn redundant_calls_and_callees() {
        let mut m = model("A B abC abD");
        let p = m.resolve(builtins::DIAMOND).unwrap();
        let r = extension(&mut m, p).unwrap();
        assert_eq!(has_redundant_calls(&r), None);
        assert_eq!(callees(&r), [Agent(0), Agent(1)]);
    }

    #[test]
    fn comparison_columns_are_independent() {
        let mut m = model("A B aC abD");
        let bsq = m.resolve("LNS^bsq").unwrap();
        let one = compare(&mut m, &[bsq], None).unwrap();
        let two = compare(&mut m, &[ProtocolId::LNS, bsq], None).unwrap();
        let from_two: Vec<_> = two
            .rows
            .iter()
            .filter_map(|(h, c)| c[1].map(|v| (h.clone(), v)))
            .collect();
        let from_one: Vec<_> = one.rows.iter().map(|(h, c)| (h.clone(), c[0].unwrap())).collect();
        assert_eq!(from_one, from_two);
        assert_eq!(one.to_csv(), "history,LNS^bsq\n30,×\n");
        assert_eq!(two.counts(), [(4, 17), (0, 1)]);
    }

    #[test]
    fn candy_requires_the_candy_graph() {
        let mut m = model("Ab Bc bC");
        assert!(matches!(verify_candy_claims(&mut m), Err(Error::Input(_))));
    }
}
