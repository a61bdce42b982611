use crate::error::{Error, Result};
use crate::graph::{Agent, Permutation};
use crate::registry::ProtocolId;

/// An agent position in a formula: a concrete agent, one of the two
/// designated template variables, or a quantified variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Agent(Agent),
    Caller,
    Callee,
    Var(char),
}

impl Term {
    pub fn agent(i: usize) -> Term {
        Term::Agent(Agent::from(i))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Binder {
    pub var: char,
    /// Agents the variable does not range over (`∀k≠i,j`).
    pub except: Vec<Term>,
}

impl Binder {
    pub fn new(var: char) -> Self {
        Binder {
            var,
            except: Vec::new(),
        }
    }

    pub fn except(var: char, except: Vec<Term>) -> Self {
        Binder { var, except }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Top,
    Num(Term, Term),
    Sec(Term, Term),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Knows(Term, ProtocolId, Box<Formula>),
    Box(Box<Program>, Box<Formula>),
    /// The protocol condition `P_xy` of a registered protocol.
    Cond(ProtocolId, Term, Term),
    /// `Ex_t` when given a term, `Ex` otherwise; expanded once the agent
    /// count is known.
    Ex(Option<Term>),
    Forall(Binder, Box<Formula>),
    Exists(Binder, Box<Formula>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Program {
    Test(Box<Formula>),
    Call(Term, Term),
    Seq(Vec<Program>),
    Choice(Vec<Program>),
    Star(Box<Program>),
    /// A registered protocol used as a program.
    Protocol(ProtocolId),
}

impl Formula {
    pub fn bottom() -> Formula {
        Formula::Not(Box::new(Formula::Top))
    }

    pub fn num(x: Term, y: Term) -> Formula {
        Formula::Num(x, y)
    }

    pub fn sec(x: Term, y: Term) -> Formula {
        Formula::Sec(x, y)
    }

    /// Negation that cancels a double negation.
    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        match f {
            Formula::Not(g) => *g,
            f => Formula::Not(Box::new(f)),
        }
    }

    /// Conjunction with nested chains flattened and `⊤` conjuncts dropped.
    pub fn and(parts: impl IntoIterator<Item = Formula>) -> Formula {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::Top => {}
                Formula::And(inner) => out.extend(inner),
                p => out.push(p),
            }
        }
        match out.len() {
            0 => Formula::Top,
            1 => out.pop().unwrap(),
            _ => Formula::And(out),
        }
    }

    pub fn or(parts: impl IntoIterator<Item = Formula>) -> Formula {
        let negs: Vec<Formula> = parts.into_iter().map(Formula::not).collect();
        if negs.is_empty() {
            return Formula::bottom();
        }
        Formula::not(Formula::and(negs))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::not(Formula::and([a, Formula::not(b)]))
    }

    pub fn knows(a: Term, p: ProtocolId, f: Formula) -> Formula {
        Formula::Knows(a, p, Box::new(f))
    }

    /// `K̂_a^P φ := ¬K_a^P ¬φ`.
    pub fn khat(a: Term, p: ProtocolId, f: Formula) -> Formula {
        Formula::not(Formula::knows(a, p, Formula::not(f)))
    }

    pub fn boxed(p: Program, f: Formula) -> Formula {
        Formula::Box(Box::new(p), Box::new(f))
    }

    /// `⟨π⟩φ := ¬[π]¬φ`.
    pub fn diamond(p: Program, f: Formula) -> Formula {
        Formula::not(Formula::boxed(p, Formula::not(f)))
    }

    pub fn forall(b: Binder, f: Formula) -> Formula {
        Formula::Forall(b, Box::new(f))
    }

    pub fn exists(b: Binder, f: Formula) -> Formula {
        Formula::Exists(b, Box::new(f))
    }

    /// Every protocol handle mentioned anywhere in the formula.
    pub fn handles(&self) -> Vec<ProtocolId> {
        let mut out = Vec::new();
        self.collect_handles(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_handles(&self, out: &mut Vec<ProtocolId>) {
        match self {
            Formula::Top | Formula::Num(..) | Formula::Sec(..) | Formula::Ex(_) => {}
            Formula::Not(f) | Formula::Forall(_, f) | Formula::Exists(_, f) => {
                f.collect_handles(out)
            }
            Formula::And(fs) => fs.iter().for_each(|f| f.collect_handles(out)),
            Formula::Knows(_, p, f) => {
                out.push(*p);
                f.collect_handles(out);
            }
            Formula::Box(p, f) => {
                p.collect_handles(out);
                f.collect_handles(out);
            }
            Formula::Cond(p, ..) => out.push(*p),
        }
    }

    /// Applies `f` to every term, including quantifier exceptions.
    pub fn map_terms(&self, f: &impl Fn(Term) -> Term) -> Formula {
        let binder = |b: &Binder| Binder {
            var: b.var,
            except: b.except.iter().map(|&t| f(t)).collect(),
        };
        match self {
            Formula::Top => Formula::Top,
            Formula::Num(x, y) => Formula::Num(f(*x), f(*y)),
            Formula::Sec(x, y) => Formula::Sec(f(*x), f(*y)),
            Formula::Not(g) => Formula::Not(Box::new(g.map_terms(f))),
            Formula::And(gs) => Formula::And(gs.iter().map(|g| g.map_terms(f)).collect()),
            Formula::Knows(a, p, g) => Formula::Knows(f(*a), *p, Box::new(g.map_terms(f))),
            Formula::Box(p, g) => Formula::Box(Box::new(p.map_terms(f)), Box::new(g.map_terms(f))),
            Formula::Cond(p, x, y) => Formula::Cond(*p, f(*x), f(*y)),
            Formula::Ex(t) => Formula::Ex(t.map(f)),
            Formula::Forall(b, g) => Formula::Forall(binder(b), Box::new(g.map_terms(f))),
            Formula::Exists(b, g) => Formula::Exists(binder(b), Box::new(g.map_terms(f))),
        }
    }

    /// Relabels concrete agents. Protocol handles are left alone: template
    /// protocols are invariant under renaming.
    pub fn permute(&self, perm: &Permutation) -> Formula {
        self.map_terms(&|t| match t {
            Term::Agent(a) => Term::Agent(perm.apply(a)),
            t => t,
        })
    }

    /// Replaces the designated caller and callee variables.
    pub fn substitute(&self, caller: Term, callee: Term) -> Formula {
        self.map_terms(&|t| match t {
            Term::Caller => caller,
            Term::Callee => callee,
            t => t,
        })
    }

    /// Expands quantifiers and `Ex` over `n` agents. The result mentions
    /// only concrete agents, or fails on a free variable.
    pub fn expand(&self, n: usize) -> Result<Formula> {
        self.expand_in(n, &mut Vec::new())
    }

    fn expand_in(&self, n: usize, env: &mut Vec<(char, Agent)>) -> Result<Formula> {
        Ok(match self {
            Formula::Top => Formula::Top,
            Formula::Num(x, y) => Formula::Num(resolve(*x, env, n)?, resolve(*y, env, n)?),
            Formula::Sec(x, y) => Formula::Sec(resolve(*x, env, n)?, resolve(*y, env, n)?),
            Formula::Not(g) => Formula::not(g.expand_in(n, env)?),
            Formula::And(gs) => {
                let mut parts = Vec::with_capacity(gs.len());
                for g in gs {
                    parts.push(g.expand_in(n, env)?);
                }
                Formula::and(parts)
            }
            Formula::Knows(a, p, g) => {
                Formula::Knows(resolve(*a, env, n)?, *p, Box::new(g.expand_in(n, env)?))
            }
            Formula::Box(p, g) => Formula::Box(
                Box::new(p.expand_in(n, env)?),
                Box::new(g.expand_in(n, env)?),
            ),
            Formula::Cond(p, x, y) => Formula::Cond(*p, resolve(*x, env, n)?, resolve(*y, env, n)?),
            Formula::Ex(None) => derived::ex(n),
            Formula::Ex(Some(t)) => match resolve(*t, env, n)? {
                Term::Agent(a) => derived::ex_agent(n, a),
                _ => unreachable!(),
            },
            Formula::Forall(b, g) | Formula::Exists(b, g) => {
                let excluded = b
                    .except
                    .iter()
                    .map(|&t| resolve(t, env, n))
                    .collect::<Result<Vec<_>>>()?;
                let mut parts = Vec::new();
                for i in 0..n {
                    let t = Term::agent(i);
                    if excluded.contains(&t) {
                        continue;
                    }
                    env.push((b.var, Agent::from(i)));
                    let part = g.expand_in(n, env);
                    env.pop();
                    parts.push(part?);
                }
                if matches!(self, Formula::Forall(..)) {
                    Formula::and(parts)
                } else {
                    Formula::or(parts)
                }
            }
        })
    }
}

fn resolve(t: Term, env: &[(char, Agent)], n: usize) -> Result<Term> {
    match t {
        Term::Agent(a) if a.index() < n => Ok(t),
        Term::Agent(a) => Err(Error::AgentOutOfRange { agent: a.index(), n }),
        Term::Var(v) => env
            .iter()
            .rev()
            .find(|(w, _)| *w == v)
            .map(|&(_, a)| Term::Agent(a))
            .ok_or_else(|| Error::FreeVariable(v.to_string())),
        Term::Caller => Err(Error::FreeVariable("a (caller)".into())),
        Term::Callee => Err(Error::FreeVariable("b (callee)".into())),
    }
}

impl Program {
    pub fn call(x: Term, y: Term) -> Program {
        Program::Call(x, y)
    }

    pub fn test(f: Formula) -> Program {
        Program::Test(Box::new(f))
    }

    pub fn seq(parts: impl IntoIterator<Item = Program>) -> Program {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Program::Seq(inner) => out.extend(inner),
                p => out.push(p),
            }
        }
        match out.len() {
            0 => Program::test(Formula::Top),
            1 => out.pop().unwrap(),
            _ => Program::Seq(out),
        }
    }

    /// Non-deterministic choice; the empty choice is `?⊥`.
    pub fn choice(parts: impl IntoIterator<Item = Program>) -> Program {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Program::Choice(inner) => out.extend(inner),
                p => out.push(p),
            }
        }
        match out.len() {
            0 => Program::test(Formula::bottom()),
            1 => out.pop().unwrap(),
            _ => Program::Choice(out),
        }
    }

    pub fn star(p: Program) -> Program {
        Program::Star(Box::new(p))
    }

    /// `π^k`, with `π^0 = ?⊤`.
    pub fn power(p: &Program, k: usize) -> Program {
        Program::seq(std::iter::repeat_n(p.clone(), k))
    }

    fn collect_handles(&self, out: &mut Vec<ProtocolId>) {
        match self {
            Program::Test(f) => f.collect_handles(out),
            Program::Call(..) => {}
            Program::Seq(ps) | Program::Choice(ps) => {
                ps.iter().for_each(|p| p.collect_handles(out))
            }
            Program::Star(p) => p.collect_handles(out),
            Program::Protocol(p) => out.push(*p),
        }
    }

    pub fn map_terms(&self, f: &impl Fn(Term) -> Term) -> Program {
        match self {
            Program::Test(g) => Program::Test(Box::new(g.map_terms(f))),
            Program::Call(x, y) => Program::Call(f(*x), f(*y)),
            Program::Seq(ps) => Program::Seq(ps.iter().map(|p| p.map_terms(f)).collect()),
            Program::Choice(ps) => Program::Choice(ps.iter().map(|p| p.map_terms(f)).collect()),
            Program::Star(p) => Program::Star(Box::new(p.map_terms(f))),
            Program::Protocol(p) => Program::Protocol(*p),
        }
    }

    fn expand_in(&self, n: usize, env: &mut Vec<(char, Agent)>) -> Result<Program> {
        Ok(match self {
            Program::Test(f) => Program::Test(Box::new(f.expand_in(n, env)?)),
            Program::Call(x, y) => {
                let (x, y) = (resolve(*x, env, n)?, resolve(*y, env, n)?);
                if x == y {
                    if let Term::Agent(a) = x {
                        return Err(Error::SelfCall(a.index()));
                    }
                }
                Program::Call(x, y)
            }
            Program::Seq(ps) => Program::Seq(
                ps.iter()
                    .map(|p| p.expand_in(n, env))
                    .collect::<Result<_>>()?,
            ),
            Program::Choice(ps) => Program::Choice(
                ps.iter()
                    .map(|p| p.expand_in(n, env))
                    .collect::<Result<_>>()?,
            ),
            Program::Star(p) => Program::Star(Box::new(p.expand_in(n, env)?)),
            Program::Protocol(p) => Program::Protocol(*p),
        })
    }
}

/// Abbreviations of the language, expanded for a concrete agent count.
pub mod derived {
    use super::*;

    /// `Ex_a`: agent `a` knows every secret.
    pub fn ex_agent(n: usize, a: Agent) -> Formula {
        Formula::and((0..n).map(|j| Formula::Sec(Term::Agent(a), Term::agent(j))))
    }

    /// `Ex_B` for a set of agents.
    pub fn ex_group(n: usize, group: &[Agent]) -> Formula {
        Formula::and(group.iter().map(|&a| ex_agent(n, a)))
    }

    /// `Ex`: everyone is an expert.
    pub fn ex(n: usize) -> Formula {
        Formula::and((0..n).map(|a| ex_agent(n, Agent::from(a))))
    }

    /// The program form of a protocol over `n` agents:
    /// `(⋃ ?(N_ab ∧ P_ab);ab)* ; ?⋀ ¬(N_ab ∧ P_ab)`.
    pub fn protocol_program(n: usize, p: ProtocolId) -> Program {
        let mut steps = Vec::new();
        let mut stop = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let (ta, tb) = (Term::agent(a), Term::agent(b));
                let allowed = Formula::and([Formula::Num(ta, tb), Formula::Cond(p, ta, tb)]);
                steps.push(Program::seq([Program::test(allowed.clone()), Program::call(ta, tb)]));
                stop.push(Formula::not(allowed));
            }
        }
        Program::seq([
            Program::star(Program::choice(steps)),
            Program::test(Formula::and(stop)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(i: usize) -> Term {
        Term::agent(i)
    }

    #[test]
    fn ex_three_agents() {
        let mut conj = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                conj.push(Formula::Sec(a(i), a(j)));
            }
        }
        assert_eq!(derived::ex(3), Formula::And(conj));
        assert_eq!(Formula::Ex(None).expand(3).unwrap(), derived::ex(3));
    }

    #[test]
    fn smart_constructors() {
        assert_eq!(Formula::and([]), Formula::Top);
        assert_eq!(Formula::or([]), Formula::bottom());
        assert_eq!(Formula::not(Formula::not(Formula::Top)), Formula::Top);
        let x = Formula::Num(a(0), a(1));
        let y = Formula::Sec(a(1), a(0));
        assert_eq!(
            Formula::and([Formula::and([x.clone(), y.clone()]), x.clone()]),
            Formula::And(vec![x.clone(), y.clone(), x.clone()])
        );
        assert_eq!(
            Formula::diamond(Program::call(a(0), a(1)), x.clone()),
            Formula::Not(Box::new(Formula::Box(
                Box::new(Program::Call(a(0), a(1))),
                Box::new(Formula::Not(Box::new(x)))
            )))
        );
        assert_eq!(
            Program::power(&Program::call(a(0), a(1)), 0),
            Program::test(Formula::Top)
        );
    }

    #[test]
    fn quantifiers_expand() {
        let f = Formula::forall(
            Binder::except('k', vec![a(1)]),
            Formula::Sec(Term::Var('k'), Term::Var('k')),
        );
        assert_eq!(
            f.expand(3).unwrap(),
            Formula::And(vec![Formula::Sec(a(0), a(0)), Formula::Sec(a(2), a(2))])
        );
        let e = Formula::exists(Binder::new('k'), Formula::Num(a(0), Term::Var('k')));
        assert_eq!(e.expand(1).unwrap(), Formula::not(Formula::not(Formula::Num(a(0), a(0)))));
        let none = Formula::exists(Binder::except('k', vec![a(0)]), Formula::Top);
        assert_eq!(none.expand(1).unwrap(), Formula::bottom());
        assert!(matches!(
            Formula::Sec(Term::Var('z'), a(0)).expand(2),
            Err(Error::FreeVariable(_))
        ));
    }

    #[test]
    fn permutation_relabels_atoms() {
        let id = Permutation::identity(3);
        let f = Formula::and([
            Formula::not(Formula::Sec(a(0), a(1))),
            Formula::knows(a(0), ProtocolId(1), Formula::Top),
        ]);
        assert_eq!(f.permute(&id), f);
        let swap = Permutation::swaps(2, &[(0, 1)]).unwrap();
        assert_eq!(Formula::Num(a(0), a(1)).permute(&swap), Formula::Num(a(1), a(0)));
        let cycle = Permutation::new(vec![1, 2, 0]).unwrap();
        assert_eq!(
            f.permute(&cycle),
            Formula::and([
                Formula::not(Formula::Sec(a(1), a(2))),
                Formula::knows(a(1), ProtocolId(1), Formula::Top),
            ])
        );
    }
}
