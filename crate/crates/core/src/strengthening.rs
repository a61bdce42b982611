//! Strengthening procedures, their iteration, limits, and the instance
//! checks relating them.

use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::graph::CallSequence;
use crate::logic::{Binder, Formula, Program, Term};
use crate::registry::{ProtocolId, ProtocolKind, Registry, SemanticRule};
use crate::semantics::{Model, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrengtheningKind {
    /// ■: `P_ab ∧ K_a^P [ab]⟨P⟩Ex`
    HardLookahead,
    /// ◆: `P_ab ∧ K̂_a^P [ab]⟨P⟩Ex`
    SoftLookahead,
    /// □: `P_ab ∧ K_a^P [ab](Ex ∨ ⋁ N_ij ∧ P_ij)`
    HardOneStep,
    /// ◇: as □ with `K̂`
    SoftOneStep,
    Hubd,
    Subd,
}

impl StrengtheningKind {
    pub const ALL: [StrengtheningKind; 6] = [
        StrengtheningKind::HardLookahead,
        StrengtheningKind::SoftLookahead,
        StrengtheningKind::HardOneStep,
        StrengtheningKind::SoftOneStep,
        StrengtheningKind::Hubd,
        StrengtheningKind::Subd,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            StrengtheningKind::HardLookahead => "bsq",
            StrengtheningKind::SoftLookahead => "bdia",
            StrengtheningKind::HardOneStep => "sq",
            StrengtheningKind::SoftOneStep => "dia",
            StrengtheningKind::Hubd => "hubd",
            StrengtheningKind::Subd => "subd",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            StrengtheningKind::HardLookahead => "■",
            StrengtheningKind::SoftLookahead => "◆",
            StrengtheningKind::HardOneStep => "□",
            StrengtheningKind::SoftOneStep => "◇",
            StrengtheningKind::Hubd => "HUBD",
            StrengtheningKind::Subd => "SUBD",
        }
    }

    pub fn is_hard(self) -> bool {
        matches!(
            self,
            StrengtheningKind::HardLookahead | StrengtheningKind::HardOneStep | StrengtheningKind::Hubd
        )
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        StrengtheningKind::ALL.into_iter().find(|k| k.suffix() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Repeat(StrengtheningKind, usize),
    Limit(StrengtheningKind),
}

/// A base protocol followed by strengthening stages, written
/// `LNS^dia,sq3` or `LNS^sq*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationSpec {
    pub base: String,
    pub stages: Vec<Stage>,
}

impl IterationSpec {
    pub fn new(base: impl Into<String>) -> Self {
        IterationSpec {
            base: base.into(),
            stages: Vec::new(),
        }
    }

    /// Appends one more application of `kind`, merging with a final stage of
    /// the same kind.
    pub fn then(mut self, kind: StrengtheningKind) -> Result<Self> {
        match self.stages.last_mut() {
            Some(Stage::Limit(_)) => {
                return Err(Error::Input(format!(
                    "cannot strengthen the limit protocol `{self}` syntactically"
                )))
            }
            Some(Stage::Repeat(k, count)) if *k == kind => *count += 1,
            _ => self.stages.push(Stage::Repeat(kind, 1)),
        }
        Ok(self)
    }

    /// Registers every intermediate protocol and returns the last one.
    pub fn build(&self, registry: &mut Registry) -> Result<ProtocolId> {
        let mut cur = registry.resolve(&self.base)?;
        for stage in &self.stages {
            match *stage {
                Stage::Repeat(kind, count) => {
                    for _ in 0..count {
                        cur = strengthen(registry, cur, kind)?;
                    }
                }
                Stage::Limit(kind) => {
                    let name = self.to_string();
                    cur = registry.register_semantic(&name, SemanticRule::Limit { base: cur, kind })?;
                }
            }
        }
        Ok(cur)
    }
}

impl fmt::Display for IterationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.base)?;
        for (i, stage) in self.stages.iter().enumerate() {
            f.write_str(if i == 0 { "^" } else { "," })?;
            match *stage {
                Stage::Repeat(k, 1) => write!(f, "{}", k.suffix())?,
                Stage::Repeat(k, c) => write!(f, "{}{c}", k.suffix())?,
                Stage::Limit(k) => write!(f, "{}*", k.suffix())?,
            }
        }
        Ok(())
    }
}

impl FromStr for IterationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, rest) = match s.split_once('^') {
            Some((b, r)) => (b, Some(r)),
            None => (s, None),
        };
        if base.is_empty() {
            return Err(Error::parse(0, "missing base protocol"));
        }
        let mut spec = IterationSpec::new(base);
        let Some(rest) = rest else {
            return Ok(spec);
        };
        let mut pos = base.len() + 1;
        for part in rest.split(',') {
            if matches!(spec.stages.last(), Some(Stage::Limit(_))) {
                return Err(Error::parse(pos, "a limit must be the last stage"));
            }
            let letters: String = part.chars().take_while(|c| c.is_ascii_lowercase()).collect();
            let kind = StrengtheningKind::from_suffix(&letters)
                .ok_or_else(|| Error::parse(pos, format!("unknown strengthening `{letters}`")))?;
            let tail = &part[letters.len()..];
            let stage = if tail == "*" {
                Stage::Limit(kind)
            } else if tail.is_empty() {
                Stage::Repeat(kind, 1)
            } else {
                let count: usize = tail
                    .parse()
                    .map_err(|_| Error::parse(pos + letters.len(), format!("bad count `{tail}`")))?;
                if count == 0 {
                    return Err(Error::parse(pos + letters.len(), "counts start at 1"));
                }
                Stage::Repeat(kind, count)
            };
            match (spec.stages.last_mut(), stage) {
                (Some(Stage::Repeat(k, c)), Stage::Repeat(k2, c2)) if *k == k2 => *c += c2,
                _ => spec.stages.push(stage),
            }
            pos += part.len() + 1;
        }
        Ok(spec)
    }
}

/// The template of a syntactic strengthening of `p`.
pub fn template(p: ProtocolId, kind: StrengtheningKind) -> Option<Formula> {
    let (a, b) = (Term::Caller, Term::Callee);
    let condition = Formula::Cond(p, a, b);
    let after = match kind {
        StrengtheningKind::HardLookahead | StrengtheningKind::SoftLookahead => {
            Formula::diamond(Program::Protocol(p), Formula::Ex(None))
        }
        StrengtheningKind::HardOneStep | StrengtheningKind::SoftOneStep => {
            let (i, j) = (Term::Var('i'), Term::Var('j'));
            let some_call = Formula::exists(
                Binder::new('i'),
                Formula::exists(
                    Binder::except('j', vec![i]),
                    Formula::and([Formula::Num(i, j), Formula::Cond(p, i, j)]),
                ),
            );
            Formula::or([Formula::Ex(None), some_call])
        }
        StrengtheningKind::Hubd | StrengtheningKind::Subd => return None,
    };
    let after_call = Formula::boxed(Program::call(a, b), after);
    let knowledge = if kind.is_hard() {
        Formula::knows(a, p, after_call)
    } else {
        Formula::khat(a, p, after_call)
    };
    Some(Formula::and([condition, knowledge]))
}

/// Registers `p` strengthened by `kind` and returns its handle.
///
/// Templates are only available for syntactic bases. Semantic bases are
/// strengthened on their extensions instead: one-step kinds by backward
/// defoliation, look-ahead kinds by quantifying success over the caller's
/// cell.
pub fn strengthen(registry: &mut Registry, p: ProtocolId, kind: StrengtheningKind) -> Result<ProtocolId> {
    let base_name = registry.try_get(p)?.name.clone();
    let spec: IterationSpec = base_name.parse::<IterationSpec>().unwrap_or_else(|_| IterationSpec::new(&base_name));
    let name = spec.then(kind)?.to_string();
    if let Some(id) = registry.id(&name) {
        return Ok(id);
    }
    let syntactic = registry.get(p).is_syntactic();
    match (kind, syntactic) {
        (StrengtheningKind::Hubd | StrengtheningKind::Subd, _) => registry.register_semantic(
            &name,
            SemanticRule::Defoliation {
                base: p,
                hard: kind.is_hard(),
            },
        ),
        (_, true) => registry.register_syntactic(&name, template(p, kind).expect("syntactic kind")),
        (StrengtheningKind::HardOneStep | StrengtheningKind::SoftOneStep, false) => registry
            .register_semantic(
                &name,
                SemanticRule::Defoliation {
                    base: p,
                    hard: kind.is_hard(),
                },
            ),
        (_, false) => registry.register_semantic(
            &name,
            SemanticRule::LookAhead {
                base: p,
                hard: kind.is_hard(),
            },
        ),
    }
}

/// Applies `kind` `count` times.
pub fn iterate(registry: &mut Registry, p: ProtocolId, kind: StrengtheningKind, count: usize) -> Result<ProtocolId> {
    let mut cur = p;
    for _ in 0..count {
        cur = strengthen(registry, cur, kind)?;
    }
    Ok(cur)
}

/// Every history in the extension, as a sorted set of states.
pub fn extension_states(model: &mut Model, p: ProtocolId) -> Result<Vec<StateId>> {
    let mut states: Vec<StateId> = model.tree(p)?.states().collect();
    states.sort_unstable();
    Ok(states)
}

/// Whether the extension of `q` is contained in that of `p`; on failure,
/// the first history of `q` outside `p`.
pub fn extension_included(model: &mut Model, q: ProtocolId, p: ProtocolId) -> Result<Option<CallSequence>> {
    let big: FxHashSet<StateId> = extension_states(model, p)?.into_iter().collect();
    let mut outside: Vec<CallSequence> = extension_states(model, q)?
        .into_iter()
        .filter(|s| !big.contains(s))
        .map(|s| model.history(s))
        .collect();
    outside.sort();
    Ok(outside.into_iter().next())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EquivalenceOutcome {
    /// `P^□k = P^HUBDk`
    pub hard: bool,
    /// `P^◇k = P^SUBDk`
    pub soft: bool,
}

/// Compares the `k`-fold syntactic one-step strengthenings of `p` with the
/// `k`-fold backward defoliations on the model's graph.
pub fn check_equivalence_theorem(model: &mut Model, p: ProtocolId, k: usize) -> Result<EquivalenceOutcome> {
    let mut same = |syntactic: StrengtheningKind, semantic: StrengtheningKind| -> Result<bool> {
        let a = iterate(model.registry_mut(), p, syntactic, k)?;
        let b = iterate(model.registry_mut(), p, semantic, k)?;
        Ok(extension_states(model, a)? == extension_states(model, b)?)
    };
    Ok(EquivalenceOutcome {
        hard: same(StrengtheningKind::HardOneStep, StrengtheningKind::Hubd)?,
        soft: same(StrengtheningKind::SoftOneStep, StrengtheningKind::Subd)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonotonicityOutcome {
    /// `Q^♥ ⊆ P^♥` on the graph.
    pub holds: bool,
    /// Terminal histories of `Q^♥` outside the extension of `P^♥`.
    pub witnesses: Vec<CallSequence>,
}

/// Checks one instance of monotonicity: given `Q ⊆ P` on the graph, is
/// `Q^kind ⊆ P^kind`?
pub fn check_monotonicity_instance(
    model: &mut Model,
    p: ProtocolId,
    q: ProtocolId,
    kind: StrengtheningKind,
) -> Result<MonotonicityOutcome> {
    if let Some(h) = extension_included(model, q, p)? {
        return Err(Error::Input(format!(
            "`{}` is not included in `{}`: history `{h}`",
            model.protocol_name(q),
            model.protocol_name(p)
        )));
    }
    let pk = strengthen(model.registry_mut(), p, kind)?;
    let qk = strengthen(model.registry_mut(), q, kind)?;
    let big: FxHashSet<StateId> = extension_states(model, pk)?.into_iter().collect();
    let outside: Vec<StateId> = extension_states(model, qk)?
        .into_iter()
        .filter(|s| !big.contains(s))
        .collect();
    let terminal: FxHashSet<StateId> = model.terminals(qk)?.into_iter().collect();
    let mut witnesses: Vec<CallSequence> = outside
        .iter()
        .filter(|s| terminal.contains(s))
        .map(|&s| model.history(s))
        .collect();
    witnesses.sort();
    Ok(MonotonicityOutcome {
        holds: outside.is_empty(),
        witnesses,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NonIdempotence {
    /// `P^■ ≠ (P^■)^■` on the graph.
    pub hard_lookahead_not_idempotent: bool,
    /// Terminal counts (successful, unsuccessful) of `P^■`, `(P^■)^■` and
    /// `(P^■)^□`.
    pub once: (usize, usize),
    pub twice: (usize, usize),
    pub then_one_step: (usize, usize),
}

fn counts(model: &mut Model, p: ProtocolId) -> Result<(usize, usize)> {
    let terminals = model.terminals(p)?;
    let ok = terminals.iter().filter(|&&s| model.all_experts(s)).count();
    Ok((ok, terminals.len() - ok))
}

pub fn check_nonidempotence(model: &mut Model, p: ProtocolId) -> Result<NonIdempotence> {
    let once = strengthen(model.registry_mut(), p, StrengtheningKind::HardLookahead)?;
    let twice = strengthen(model.registry_mut(), once, StrengtheningKind::HardLookahead)?;
    let then_sq = strengthen(model.registry_mut(), once, StrengtheningKind::HardOneStep)?;
    Ok(NonIdempotence {
        hard_lookahead_not_idempotent: extension_states(model, once)? != extension_states(model, twice)?,
        once: counts(model, once)?,
        twice: counts(model, twice)?,
        then_one_step: counts(model, then_sq)?,
    })
}

/// Whether `p` is a syntactic protocol (its strengthenings have templates).
pub fn is_syntactic(registry: &Registry, p: ProtocolId) -> bool {
    matches!(registry.get(p).kind, ProtocolKind::Syntactic(_))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_text() {
        for (text, stages) in [
            ("LNS", vec![]),
            ("LNS^bsq", vec![Stage::Repeat(StrengtheningKind::HardLookahead, 1)]),
            ("LNS^sq2", vec![Stage::Repeat(StrengtheningKind::HardOneStep, 2)]),
            (
                "LNS^dia,sq3",
                vec![
                    Stage::Repeat(StrengtheningKind::SoftOneStep, 1),
                    Stage::Repeat(StrengtheningKind::HardOneStep, 3),
                ],
            ),
            ("LNS^sq*", vec![Stage::Limit(StrengtheningKind::HardOneStep)]),
        ] {
            let spec: IterationSpec = text.parse().unwrap();
            assert_eq!(spec.base, "LNS");
            assert_eq!(spec.stages, stages);
            assert_eq!(spec.to_string(), text);
        }
        assert_eq!("LNS^sq,sq".parse::<IterationSpec>().unwrap().to_string(), "LNS^sq2");
        assert!("LNS^sq*,dia".parse::<IterationSpec>().is_err());
        assert!("LNS^sq0".parse::<IterationSpec>().is_err());
        assert!("LNS^box".parse::<IterationSpec>().is_err());
    }

    #[test]
    fn names_compose() {
        let mut r = Registry::new();
        let p = r.resolve("LNS^dia,sq3").unwrap();
        assert_eq!(r.name(p), "LNS^dia,sq3");
        assert!(r.id("LNS^dia").is_some());
        assert!(r.id("LNS^dia,sq2").is_some());
        let q = r.id("LNS^dia,sq2").unwrap();
        let again = strengthen(&mut r, q, StrengtheningKind::HardOneStep).unwrap();
        assert_eq!(again, p);
        assert_eq!(r.get(p).stratum, 4);
        let limit = r.resolve("LNS^dia*").unwrap();
        assert_eq!(r.name(limit), "LNS^dia*");
    }

    #[test]
    fn one_step_template_instantiates() {
        let mut r = Registry::new();
        let p = strengthen(&mut r, ProtocolId::LNS, StrengtheningKind::HardOneStep).unwrap();
        let n = 3;
        let t = |i: usize| Term::agent(i);
        let mut calls = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    calls.push(Formula::and([
                        Formula::Num(t(i), t(j)),
                        Formula::not(Formula::Sec(t(i), t(j))),
                    ]));
                }
            }
        }
        let expected = Formula::and([
            Formula::not(Formula::Sec(t(0), t(1))),
            Formula::knows(
                t(0),
                ProtocolId::LNS,
                Formula::boxed(
                    Program::call(t(0), t(1)),
                    Formula::or(std::iter::once(crate::logic::derived::ex(n)).chain(calls)),
                ),
            ),
        ]);
        assert_eq!(r.instantiate(p, 0, 1, n).unwrap(), expected);
    }
}
