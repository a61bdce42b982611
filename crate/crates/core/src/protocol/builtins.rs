//! Protocols beyond `ANY` and `LNS`.

use crate::error::{Error, Result};
use crate::graph::{Agent, Call, GossipGraph};
use crate::logic::parse_formula_with;
use crate::registry::{ProtocolId, Registry, SemanticRule};

pub const CALL_ONCE: &str = "CallOnce";
pub const DIAMOND: &str = "Diamond";
pub const DIAMOND_SYNTACTIC: &str = "DiamondK";
pub const WAIT: &str = "Wait";

/// `ψ_ab` of the syntactic diamond protocol, one disjunct per stage.
///
/// In the stage (4) disjunct the inner variable excludes `{a,k}`, as in
/// the stage (3) disjunct it mirrors.
pub const DIAMOND_PSI: &str = "\
    (all k. all l!=k. ~S(k,l)) \
  | ((some k. some l!=k. (S(k,l) & S(l,k) & (all m!=k,l. all n!=m. ~S(m,n)))) \
     & (all k!=a. ~S(a,k))) \
  | (~S(a,b) & ( \
       ((some k!=a. some l!=a,k. S(a,k) & S(a,l)) \
        & (all k!=a. (S(k,a) -> (all l!=a,k. ~S(l,a))))) \
     | (K[a] (all k. some l!=k. (S(k,l) & (all m!=k,l. ~S(k,m)))) \
        & (all k. (N(k,a) -> S(k,a)))))) \
  | (~S(a,b) & Khat[a] (some k. Ex(k)) \
     & ~(some k!=a. some l!=a,k. S(a,k) & S(a,l)) \
     & (all k. (N(k,a) -> S(k,a)))) \
  | (~S(a,b) & Khat[a] (all k!=a. Ex(k)))";

/// The ad hoc protocol in which the callee's knowledge of the caller's
/// number makes both wait until some secret has been shared.
pub const WAIT_TEMPLATE: &str = "~S(a,b) & (~N(b,a) | (some k. some l!=k. S(k,l)))";

/// Permission in the five-stage diamond protocol, for a possible `call`
/// after `history`.
///
/// The stages name the diamond's agents; here the callers of stages (1) and
/// (2) are the agents that initially know another number and their targets
/// are the remaining agents, so the rule is defined on every graph.
pub fn diamond_stage_allows(initial: &GossipGraph, history: &[Call], call: Call) -> bool {
    let source = |a: Agent| initial.numbers(a).len() > 1;
    let (x, y) = (call.caller, call.callee);
    match history.len() {
        0 => source(x) && !source(y),
        1 => source(x) && x != history[0].caller && !source(y),
        2 => x == history[1].caller && !source(y) && y != history[1].callee,
        3 => x == history[0].caller && !source(y) && y != history[0].callee,
        4 => {
            let z = history[1].callee;
            if x != z {
                return false;
            }
            let Ok(g) = initial.apply_sequence(&history.to_vec().into()) else {
                return false;
            };
            let missing: Vec<Agent> = g.agents().filter(|&b| !g.knows_secret(z, b)).collect();
            missing == [y]
        }
        _ => false,
    }
}

pub fn call_once(registry: &mut Registry) -> ProtocolId {
    registry
        .register_semantic(CALL_ONCE, SemanticRule::CallOnce)
        .expect("valid name")
}

pub fn diamond_semantic(registry: &mut Registry) -> ProtocolId {
    registry
        .register_semantic(DIAMOND, SemanticRule::DiamondStages)
        .expect("valid name")
}

pub fn diamond_syntactic(registry: &mut Registry) -> ProtocolId {
    if let Some(id) = registry.id(DIAMOND_SYNTACTIC) {
        return id;
    }
    let text = format!("K[a] ({DIAMOND_PSI})");
    registry
        .register_template_text(DIAMOND_SYNTACTIC, &text)
        .expect("the diamond template parses")
}

pub fn wait(registry: &mut Registry) -> ProtocolId {
    if let Some(id) = registry.id(WAIT) {
        return id;
    }
    registry
        .register_template_text(WAIT, WAIT_TEMPLATE)
        .expect("the wait template parses")
}

/// A semantic protocol from a predicate over (initial graph, history, call).
pub fn custom(
    registry: &mut Registry,
    name: &str,
    pred: impl Fn(&GossipGraph, &[Call], Call) -> bool + Send + Sync + 'static,
) -> Result<ProtocolId> {
    if registry.id(name).is_some() {
        return Err(Error::Input(format!("protocol `{name}` already registered")));
    }
    registry.register_semantic(name, SemanticRule::Custom(std::sync::Arc::new(pred)))
}

pub fn register_all(registry: &mut Registry) {
    call_once(registry);
    diamond_semantic(registry);
    diamond_syntactic(registry);
    wait(registry);
}

/// Parses a template with handles resolved in `registry`.
pub fn parse_template(registry: &mut Registry, text: &str) -> Result<crate::logic::Formula> {
    parse_formula_with(text, &mut |h| registry.resolve(h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> Call {
        s.parse().unwrap()
    }

    #[test]
    fn stages_on_the_diamond() {
        let g: GossipGraph = "A B abC abD".parse().unwrap();
        assert!(diamond_stage_allows(&g, &[], c("20")));
        assert!(!diamond_stage_allows(&g, &[], c("01")));
        assert!(diamond_stage_allows(&g, &[c("20")], c("31")));
        assert!(!diamond_stage_allows(&g, &[c("20")], c("21")));
        assert!(diamond_stage_allows(&g, &[c("20"), c("30")], c("31")));
        assert!(diamond_stage_allows(&g, &[c("20"), c("30"), c("31")], c("21")));
        assert!(diamond_stage_allows(&g, &[c("20"), c("30"), c("31"), c("21")], c("01")));
        assert!(!diamond_stage_allows(&g, &[c("20"), c("31"), c("30"), c("21")], c("10")));
    }

    #[test]
    fn builtins_register_once() {
        let mut r = Registry::with_builtins();
        let before = r.len();
        register_all(&mut r);
        assert_eq!(r.len(), before);
        assert!(r.get(r.id(DIAMOND_SYNTACTIC).unwrap()).stratum >= 1);
        assert!(custom(&mut r, WAIT, |_, _, _| true).is_err());
    }
}
