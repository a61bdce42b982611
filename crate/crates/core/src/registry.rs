//! Named protocols with their strata.

use std::fmt;
use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::graph::{Call, GossipGraph};
use crate::logic::{parse_formula_with, Formula, Term};
use crate::strengthening::StrengtheningKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProtocolId(pub u32);

impl ProtocolId {
    pub const ANY: ProtocolId = ProtocolId(0);
    pub const LNS: ProtocolId = ProtocolId(1);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Permission predicate over (initial graph, history, candidate call).
/// Possibility of the call is checked by the caller.
pub type Predicate = Arc<dyn Fn(&GossipGraph, &[Call], Call) -> bool + Send + Sync>;

/// How a semantic protocol decides permission. All rules other than
/// `Custom` are interpreted by the evaluation engine.
#[derive(Clone)]
pub enum SemanticRule {
    CallOnce,
    /// The five-stage protocol for the diamond graph.
    DiamondStages,
    /// Uniform backward defoliation; `hard` quantifies universally over the
    /// caller's cell.
    Defoliation { base: ProtocolId, hard: bool },
    /// Look-ahead strengthening computed on extensions.
    LookAhead { base: ProtocolId, hard: bool },
    /// Iterate `kind` on `base` until the terminal extension is stable.
    Limit { base: ProtocolId, kind: StrengtheningKind },
    Custom(Predicate),
}

impl SemanticRule {
    pub fn base(&self) -> Option<ProtocolId> {
        match self {
            SemanticRule::Defoliation { base, .. }
            | SemanticRule::LookAhead { base, .. }
            | SemanticRule::Limit { base, .. } => Some(*base),
            _ => None,
        }
    }
}

impl fmt::Debug for SemanticRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SemanticRule::CallOnce => f.write_str("CallOnce"),
            SemanticRule::DiamondStages => f.write_str("DiamondStages"),
            SemanticRule::Defoliation { base, hard } => {
                write!(f, "Defoliation {{ base: {base:?}, hard: {hard} }}")
            }
            SemanticRule::LookAhead { base, hard } => {
                write!(f, "LookAhead {{ base: {base:?}, hard: {hard} }}")
            }
            SemanticRule::Limit { base, kind } => {
                write!(f, "Limit {{ base: {base:?}, kind: {kind:?} }}")
            }
            SemanticRule::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ProtocolKind {
    /// A condition template over the designated caller and callee.
    Syntactic(Formula),
    Semantic(SemanticRule),
}

#[derive(Debug, Clone)]
pub struct Protocol {
    pub name: String,
    pub kind: ProtocolKind,
    pub stratum: u32,
}

impl Protocol {
    pub fn is_syntactic(&self) -> bool {
        matches!(self.kind, ProtocolKind::Syntactic(_))
    }

    pub fn template(&self) -> Option<&Formula> {
        match &self.kind {
            ProtocolKind::Syntactic(t) => Some(t),
            ProtocolKind::Semantic(_) => None,
        }
    }
}

/// Append-only table of protocols. Cloning is cheap: protocols are shared.
#[derive(Debug, Clone)]
pub struct Registry {
    protocols: Vec<Arc<Protocol>>,
    by_name: FxHashMap<String, ProtocolId>,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::new()
    }
}

impl Registry {
    /// A registry holding `ANY` (template `⊤`) and `LNS` (template `¬S_ab`).
    pub fn new() -> Self {
        let mut r = Registry {
            protocols: Vec::new(),
            by_name: FxHashMap::default(),
        };
        r.insert("ANY", ProtocolKind::Syntactic(Formula::Top), 0);
        r.insert(
            "LNS",
            ProtocolKind::Syntactic(Formula::not(Formula::Sec(Term::Caller, Term::Callee))),
            0,
        );
        r
    }

    /// [`Registry::new`] plus every other built-in protocol.
    pub fn with_builtins() -> Self {
        let mut r = Registry::new();
        crate::protocol::builtins::register_all(&mut r);
        r
    }

    fn insert(&mut self, name: &str, kind: ProtocolKind, stratum: u32) -> ProtocolId {
        let id = ProtocolId(self.protocols.len() as u32);
        self.protocols.push(Arc::new(Protocol {
            name: name.to_string(),
            kind,
            stratum,
        }));
        self.by_name.insert(name.to_string(), id);
        id
    }

    fn stratum_above(&self, handles: &[ProtocolId]) -> Result<u32> {
        let mut stratum = 0;
        for &h in handles {
            let p = self
                .protocols
                .get(h.index())
                .ok_or_else(|| Error::UnknownProtocol(format!("#{}", h.0)))?;
            stratum = stratum.max(p.stratum + 1);
        }
        Ok(stratum)
    }

    /// Registers a template protocol; its stratum is one above the highest
    /// protocol its template mentions. Re-registering a name returns the
    /// existing handle.
    pub fn register_syntactic(&mut self, name: &str, template: Formula) -> Result<ProtocolId> {
        validate_name(name)?;
        if let Some(id) = self.id(name) {
            return Ok(id);
        }
        let stratum = self.stratum_above(&template.handles())?;
        Ok(self.insert(name, ProtocolKind::Syntactic(template), stratum))
    }

    /// Parses `text` as a template and registers it. The template may not
    /// mention `name` itself.
    pub fn register_template_text(&mut self, name: &str, text: &str) -> Result<ProtocolId> {
        validate_name(name)?;
        if self.id(name).is_some() {
            return Err(Error::Input(format!("protocol `{name}` already registered")));
        }
        let template = {
            let mut resolver = |h: &str| -> Result<ProtocolId> {
                if h == name {
                    return Err(Error::Stratification(name.to_string()));
                }
                self.resolve(h)
            };
            parse_formula_with(text, &mut resolver)?
        };
        self.register_syntactic(name, template)
    }

    pub fn register_semantic(&mut self, name: &str, rule: SemanticRule) -> Result<ProtocolId> {
        validate_name(name)?;
        if let Some(id) = self.id(name) {
            return Ok(id);
        }
        let handles: Vec<ProtocolId> = rule.base().into_iter().collect();
        let stratum = self.stratum_above(&handles)?;
        Ok(self.insert(name, ProtocolKind::Semantic(rule), stratum))
    }

    pub fn id(&self, name: &str) -> Option<ProtocolId> {
        self.by_name.get(name).copied()
    }

    /// Looks a name up, building iterated strengthenings such as
    /// `LNS^dia,sq3` on demand.
    pub fn resolve(&mut self, name: &str) -> Result<ProtocolId> {
        if let Some(id) = self.id(name) {
            return Ok(id);
        }
        if name.contains('^') {
            let spec: crate::strengthening::IterationSpec = name.parse()?;
            return spec.build(self);
        }
        Err(Error::UnknownProtocol(name.to_string()))
    }

    pub fn get(&self, id: ProtocolId) -> &Arc<Protocol> {
        &self.protocols[id.index()]
    }

    pub fn try_get(&self, id: ProtocolId) -> Result<&Arc<Protocol>> {
        self.protocols
            .get(id.index())
            .ok_or_else(|| Error::UnknownProtocol(format!("#{}", id.0)))
    }

    pub fn name(&self, id: ProtocolId) -> &str {
        &self.get(id).name
    }

    pub fn len(&self) -> usize {
        self.protocols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protocols.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ProtocolId, &Arc<Protocol>)> {
        self.protocols
            .iter()
            .enumerate()
            .map(|(i, p)| (ProtocolId(i as u32), p))
    }

    /// The template with caller and callee substituted, quantifiers and
    /// macros expanded for `n` agents, and conditions of syntactic
    /// protocols inlined.
    pub fn instantiate(
        &self,
        id: ProtocolId,
        caller: usize,
        callee: usize,
        n: usize,
    ) -> Result<Formula> {
        if caller == callee {
            return Err(Error::SelfCall(caller));
        }
        for a in [caller, callee] {
            if a >= n {
                return Err(Error::AgentOutOfRange { agent: a, n });
            }
        }
        let template = self
            .try_get(id)?
            .template()
            .ok_or_else(|| Error::Input(format!("`{}` is not a syntactic protocol", self.name(id))))?;
        let f = template
            .substitute(Term::agent(caller), Term::agent(callee))
            .expand(n)?;
        self.inline_conditions(&f, n)
    }

    fn inline_conditions(&self, f: &Formula, n: usize) -> Result<Formula> {
        Ok(match f {
            Formula::Cond(p, Term::Agent(x), Term::Agent(y))
                if self.try_get(*p)?.is_syntactic() =>
            {
                self.instantiate(*p, x.index(), y.index(), n)?
            }
            Formula::Not(g) => Formula::not(self.inline_conditions(g, n)?),
            Formula::And(gs) => Formula::and(
                gs.iter()
                    .map(|g| self.inline_conditions(g, n))
                    .collect::<Result<Vec<_>>>()?,
            ),
            Formula::Knows(a, p, g) => Formula::knows(*a, *p, self.inline_conditions(g, n)?),
            Formula::Box(prog, g) => Formula::boxed((**prog).clone(), self.inline_conditions(g, n)?),
            other => other.clone(),
        })
    }
}

fn validate_name(name: &str) -> Result<()> {
    let mut chars = name.chars();
    let ok = chars.next().is_some_and(|c| c.is_ascii_uppercase())
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '^' | ',' | '*'));
    if ok {
        Ok(())
    } else {
        Err(Error::Input(format!("invalid protocol name `{name}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates() {
        let r = Registry::new();
        assert_eq!(r.instantiate(ProtocolId::LNS, 2, 0, 3).unwrap(), {
            Formula::not(Formula::Sec(Term::agent(2), Term::agent(0)))
        });
        assert_eq!(r.instantiate(ProtocolId::ANY, 1, 2, 3).unwrap(), Formula::Top);
        assert_eq!(r.get(ProtocolId::LNS).stratum, 0);
        assert!(matches!(
            r.instantiate(ProtocolId::LNS, 1, 1, 3),
            Err(Error::SelfCall(1))
        ));
    }

    #[test]
    fn strata_and_self_reference() {
        let mut r = Registry::new();
        let p = r.register_template_text("Careful", "~S(a,b) & K[a,LNS] T").unwrap();
        assert_eq!(r.get(p).stratum, 1);
        let q = r.register_template_text("Careful2", "K[a,Careful] Careful(a,b)").unwrap();
        assert_eq!(r.get(q).stratum, 2);
        assert!(matches!(
            r.register_template_text("X", "K[a,X] T"),
            Err(Error::Stratification(_))
        ));
        assert!(matches!(
            r.register_template_text("Y", "K[a,Nope] T"),
            Err(Error::UnknownProtocol(_))
        ));
        assert!(r.register_syntactic("lower", Formula::Top).is_err());
    }
}
