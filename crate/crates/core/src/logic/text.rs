//! ASCII syntax for formulas and programs.
//!
//! ```text
//! f ::= f -> f | f '|' f | f & f | ~f | T | F | N(t,t) | S(t,t) | Ex | Ex(t)
//!     | K[t,P] f | K[t] f | Khat[t,P] f | [p] f | <p> f | P(t,t) | (f)
//!     | all v. f | all v!=t,t. f | some v. f
//! p ::= p U p | p ; p | p* | ?f | tt | P | (p)
//! t ::= 0..9 | a (caller) | b (callee) | any other lower-case letter
//! ```
//!
//! A quantifier body extends as far right as possible.

use crate::error::{Error, Result};
use crate::graph::Agent;
use crate::registry::{ProtocolId, Registry};

use super::{Binder, Formula, Program, Term};

const RESERVED: &[&str] = &["T", "F", "N", "S", "K", "Khat", "Ex", "U"];

pub fn parse_formula(text: &str, registry: &mut Registry) -> Result<Formula> {
    parse_formula_with(text, &mut |h| registry.resolve(h))
}

pub fn parse_program(text: &str, registry: &mut Registry) -> Result<Program> {
    let mut resolve = |h: &str| registry.resolve(h);
    let mut p = Parser::new(text, &mut resolve);
    let prog = p.program()?;
    p.finish()?;
    Ok(prog)
}

/// Parses with a custom handle resolver.
pub fn parse_formula_with(
    text: &str,
    resolve: &mut dyn FnMut(&str) -> Result<ProtocolId>,
) -> Result<Formula> {
    let mut p = Parser::new(text, resolve);
    let f = p.formula()?;
    p.finish()?;
    Ok(f)
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    bound: Vec<char>,
    resolve: &'a mut dyn FnMut(&str) -> Result<ProtocolId>,
}

impl<'a> Parser<'a> {
    fn new(text: &str, resolve: &'a mut dyn FnMut(&str) -> Result<ProtocolId>) -> Self {
        Parser {
            chars: text.chars().collect(),
            pos: 0,
            bound: Vec::new(),
            resolve,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::parse(self.pos, msg))
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn peek_str(&mut self, s: &str) -> bool {
        self.skip_ws();
        let s: Vec<char> = s.chars().collect();
        self.chars[self.pos..].starts_with(&s)
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.peek_str(s) {
            self.pos += s.chars().count();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<()> {
        if self.eat(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn finish(&mut self) -> Result<()> {
        if self.peek().is_some() {
            return self.err("unexpected trailing input");
        }
        Ok(())
    }

    /// An identifier, with an optional `^stages` suffix for handles.
    fn word(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self
            .chars
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == '_')
        {
            self.pos += 1;
        }
        if self.chars.get(self.pos) == Some(&'^') {
            self.pos += 1;
            while self
                .chars
                .get(self.pos)
                .is_some_and(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, ',' | '*'))
            {
                self.pos += 1;
            }
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn handle(&mut self, name: &str, at: usize) -> Result<ProtocolId> {
        (self.resolve)(name).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::parse(at, msg),
            e => e,
        })
    }

    fn term(&mut self) -> Result<Term> {
        self.skip_ws();
        let c = match self.chars.get(self.pos) {
            Some(&c) => c,
            None => return self.err("expected an agent or variable"),
        };
        let t = if let Some(d) = c.to_digit(10) {
            Term::Agent(Agent(d as u8))
        } else if c.is_ascii_lowercase() {
            if self.bound.contains(&c) {
                Term::Var(c)
            } else if c == 'a' {
                Term::Caller
            } else if c == 'b' {
                Term::Callee
            } else {
                Term::Var(c)
            }
        } else {
            return self.err(format!("unexpected `{c}`, expected an agent or variable"));
        };
        self.pos += 1;
        Ok(t)
    }

    fn pair(&mut self) -> Result<(Term, Term)> {
        self.expect("(")?;
        let x = self.term()?;
        self.expect(",")?;
        let y = self.term()?;
        self.expect(")")?;
        Ok((x, y))
    }

    fn formula(&mut self) -> Result<Formula> {
        let lhs = self.disjunction()?;
        if self.eat("->") {
            let rhs = self.formula()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Formula> {
        let mut parts = vec![self.conjunction()?];
        while self.eat("|") {
            parts.push(self.conjunction()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::or(parts)
        })
    }

    fn conjunction(&mut self) -> Result<Formula> {
        let mut parts = vec![self.unary()?];
        while self.eat("&") {
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::and(parts)
        })
    }

    fn knowledge_index(&mut self) -> Result<(Term, ProtocolId)> {
        self.expect("[")?;
        let a = self.term()?;
        let p = if self.eat(",") {
            let at = self.pos;
            let name = self.word();
            if name.is_empty() {
                return self.err("expected a protocol name");
            }
            self.handle(&name, at)?
        } else {
            ProtocolId::ANY
        };
        self.expect("]")?;
        Ok((a, p))
    }

    fn unary(&mut self) -> Result<Formula> {
        match self.peek() {
            None => self.err("unexpected end of input"),
            Some('~') => {
                self.pos += 1;
                Ok(Formula::not(self.unary()?))
            }
            Some('(') => {
                self.pos += 1;
                let f = self.formula()?;
                self.expect(")")?;
                Ok(f)
            }
            Some('[') => {
                self.pos += 1;
                let p = self.program()?;
                self.expect("]")?;
                Ok(Formula::boxed(p, self.unary()?))
            }
            Some('<') => {
                self.pos += 1;
                let p = self.program()?;
                self.expect(">")?;
                Ok(Formula::diamond(p, self.unary()?))
            }
            Some(c) if c.is_ascii_lowercase() => self.quantifier(),
            Some(c) if c.is_ascii_uppercase() => self.atom(),
            Some(c) => self.err(format!("unexpected `{c}`")),
        }
    }

    fn quantifier(&mut self) -> Result<Formula> {
        let word = self.word();
        let universal = match word.as_str() {
            "all" => true,
            "some" => false,
            _ => return self.err(format!("unexpected `{word}`, expected a formula")),
        };
        self.skip_ws();
        let var = match self.chars.get(self.pos) {
            Some(&c) if c.is_ascii_lowercase() => c,
            _ => return self.err("expected a variable"),
        };
        self.pos += 1;
        let mut except = Vec::new();
        if self.eat("!=") {
            except.push(self.term()?);
            while self.eat(",") {
                except.push(self.term()?);
            }
        }
        self.expect(".")?;
        self.bound.push(var);
        let body = self.formula();
        self.bound.pop();
        let binder = Binder::except(var, except);
        Ok(if universal {
            Formula::forall(binder, body?)
        } else {
            Formula::exists(binder, body?)
        })
    }

    fn atom(&mut self) -> Result<Formula> {
        let at = self.pos;
        let word = self.word();
        match word.as_str() {
            "T" => Ok(Formula::Top),
            "F" => Ok(Formula::bottom()),
            "N" => {
                let (x, y) = self.pair()?;
                Ok(Formula::Num(x, y))
            }
            "S" => {
                let (x, y) = self.pair()?;
                Ok(Formula::Sec(x, y))
            }
            "Ex" => {
                if self.eat("(") {
                    let t = self.term()?;
                    self.expect(")")?;
                    Ok(Formula::Ex(Some(t)))
                } else {
                    Ok(Formula::Ex(None))
                }
            }
            "K" | "Khat" => {
                let (a, p) = self.knowledge_index()?;
                let body = self.unary()?;
                Ok(if word == "K" {
                    Formula::knows(a, p, body)
                } else {
                    Formula::khat(a, p, body)
                })
            }
            "U" => self.err("unexpected `U`"),
            _ => {
                let p = self.handle(&word, at)?;
                let (x, y) = self.pair()?;
                Ok(Formula::Cond(p, x, y))
            }
        }
    }

    fn program(&mut self) -> Result<Program> {
        let mut parts = vec![self.sequence()?];
        while self.peek() == Some('U') {
            self.pos += 1;
            parts.push(self.sequence()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Program::Choice(parts)
        })
    }

    fn sequence(&mut self) -> Result<Program> {
        let mut parts = vec![self.postfix()?];
        while self.eat(";") {
            parts.push(self.postfix()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Program::Seq(parts)
        })
    }

    fn postfix(&mut self) -> Result<Program> {
        let mut p = self.program_atom()?;
        while self.eat("*") {
            p = Program::star(p);
        }
        Ok(p)
    }

    fn program_atom(&mut self) -> Result<Program> {
        match self.peek() {
            Some('?') => {
                self.pos += 1;
                Ok(Program::test(self.unary()?))
            }
            Some('(') => {
                self.pos += 1;
                let p = self.program()?;
                self.expect(")")?;
                Ok(p)
            }
            Some(c) if c.is_ascii_digit() || c.is_ascii_lowercase() => {
                let x = self.term()?;
                // the two agents of a call are written without a separator
                let y = match self.chars.get(self.pos) {
                    Some(c) if c.is_ascii_digit() || c.is_ascii_lowercase() => self.term()?,
                    _ => return self.err("a call needs two agents"),
                };
                if x == y && matches!(x, Term::Agent(_)) {
                    return self.err("a call needs two distinct agents");
                }
                Ok(Program::call(x, y))
            }
            Some(c) if c.is_ascii_uppercase() => {
                let at = self.pos;
                let word = self.word();
                if RESERVED.contains(&word.as_str()) {
                    return Err(Error::parse(at, format!("`{word}` is not a program")));
                }
                Ok(Program::Protocol(self.handle(&word, at)?))
            }
            Some(c) => self.err(format!("unexpected `{c}` in program")),
            None => self.err("unexpected end of input in program"),
        }
    }
}

// Precedence levels, loosest first.
const IMPLIES: u8 = 0;
const OR: u8 = 1;
const AND: u8 = 2;
const UNARY: u8 = 3;

fn term_text(t: Term) -> String {
    match t {
        Term::Agent(a) => a.to_string(),
        Term::Caller => "a".into(),
        Term::Callee => "b".into(),
        Term::Var(c) => c.to_string(),
    }
}

fn handle_text(id: ProtocolId, registry: &Registry) -> String {
    match registry.try_get(id) {
        Ok(p) => p.name.clone(),
        Err(_) => format!("P{}", id.0),
    }
}

pub fn print_formula(f: &Formula, registry: &Registry) -> String {
    let mut out = String::new();
    write_formula(f, registry, IMPLIES, &mut out);
    out
}

pub fn print_program(p: &Program, registry: &Registry) -> String {
    let mut out = String::new();
    write_program(p, registry, 0, &mut out);
    out
}

fn write_formula(f: &Formula, r: &Registry, ctx: u8, out: &mut String) {
    let (level, text) = formula_text(f, r);
    if level < ctx {
        out.push('(');
        out.push_str(&text);
        out.push(')');
    } else {
        out.push_str(&text);
    }
}

fn sub(f: &Formula, r: &Registry, ctx: u8) -> String {
    let mut s = String::new();
    write_formula(f, r, ctx, &mut s);
    s
}

fn formula_text(f: &Formula, r: &Registry) -> (u8, String) {
    match f {
        Formula::Top => (UNARY, "T".into()),
        Formula::Num(x, y) => (UNARY, format!("N({},{})", term_text(*x), term_text(*y))),
        Formula::Sec(x, y) => (UNARY, format!("S({},{})", term_text(*x), term_text(*y))),
        Formula::Cond(p, x, y) => (
            UNARY,
            format!("{}({},{})", handle_text(*p, r), term_text(*x), term_text(*y)),
        ),
        Formula::Ex(None) => (UNARY, "Ex".into()),
        Formula::Ex(Some(t)) => (UNARY, format!("Ex({})", term_text(*t))),
        Formula::And(parts) => (
            AND,
            parts
                .iter()
                .map(|p| sub(p, r, UNARY))
                .collect::<Vec<_>>()
                .join(" & "),
        ),
        Formula::Knows(a, p, g) => (UNARY, format!("{} {}", knows_prefix("K", *a, *p, r), sub(g, r, UNARY))),
        Formula::Box(p, g) => (UNARY, format!("[{}] {}", print_program(p, r), sub(g, r, UNARY))),
        Formula::Forall(b, g) | Formula::Exists(b, g) => {
            let q = if matches!(f, Formula::Forall(..)) { "all" } else { "some" };
            let mut head = format!("{q} {}", b.var);
            if !b.except.is_empty() {
                let ex: Vec<String> = b.except.iter().map(|&t| term_text(t)).collect();
                head.push_str(&format!("!={}", ex.join(",")));
            }
            (IMPLIES, format!("{head}. {}", sub(g, r, IMPLIES)))
        }
        Formula::Not(inner) => match &**inner {
            Formula::Top => (UNARY, "F".into()),
            Formula::Box(p, g) if matches!(**g, Formula::Not(_)) => {
                let Formula::Not(h) = &**g else { unreachable!() };
                (UNARY, format!("<{}> {}", print_program(p, r), sub(h, r, UNARY)))
            }
            Formula::Knows(a, p, g) if matches!(**g, Formula::Not(_)) => {
                let Formula::Not(h) = &**g else { unreachable!() };
                (UNARY, format!("{} {}", knows_prefix("Khat", *a, *p, r), sub(h, r, UNARY)))
            }
            Formula::And(parts) if parts.iter().all(|p| matches!(p, Formula::Not(_))) => (
                OR,
                parts
                    .iter()
                    .map(|p| {
                        let Formula::Not(q) = p else { unreachable!() };
                        sub(q, r, AND)
                    })
                    .collect::<Vec<_>>()
                    .join(" | "),
            ),
            Formula::And(parts)
                if parts.len() == 2 && matches!(parts[1], Formula::Not(_)) =>
            {
                let Formula::Not(rhs) = &parts[1] else { unreachable!() };
                (IMPLIES, format!("{} -> {}", sub(&parts[0], r, OR), sub(rhs, r, IMPLIES)))
            }
            g => (UNARY, format!("~{}", sub(g, r, UNARY))),
        },
    }
}

fn knows_prefix(op: &str, a: Term, p: ProtocolId, r: &Registry) -> String {
    if p == ProtocolId::ANY {
        format!("{op}[{}]", term_text(a))
    } else {
        format!("{op}[{},{}]", term_text(a), handle_text(p, r))
    }
}

fn write_program(p: &Program, r: &Registry, ctx: u8, out: &mut String) {
    let (level, text) = match p {
        Program::Test(f) => (2, format!("?{}", sub(f, r, UNARY))),
        Program::Call(x, y) => (2, format!("{}{}", term_text(*x), term_text(*y))),
        Program::Protocol(id) => (2, handle_text(*id, r)),
        Program::Star(q) => {
            let mut s = String::new();
            write_program(q, r, 3, &mut s);
            (2, format!("{s}*"))
        }
        Program::Seq(ps) => (
            1,
            ps.iter()
                .map(|q| {
                    let mut s = String::new();
                    write_program(q, r, 2, &mut s);
                    s
                })
                .collect::<Vec<_>>()
                .join(" ; "),
        ),
        Program::Choice(ps) => (
            0,
            ps.iter()
                .map(|q| {
                    let mut s = String::new();
                    write_program(q, r, 1, &mut s);
                    s
                })
                .collect::<Vec<_>>()
                .join(" U "),
        ),
    };
    if level < ctx {
        out.push('(');
        out.push_str(&text);
        out.push(')');
    } else {
        out.push_str(&text);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Formula {
        parse_formula(s, &mut Registry::new()).unwrap()
    }

    fn ag(i: usize) -> Term {
        Term::agent(i)
    }

    #[test]
    fn simple_formulas() {
        assert_eq!(parse("~S(2,0)"), Formula::not(Formula::Sec(ag(2), ag(0))));
        assert_eq!(
            parse("K[1,LNS] Ex"),
            Formula::knows(ag(1), ProtocolId::LNS, Formula::Ex(None))
        );
        assert_eq!(
            parse("[20]<LNS> Ex"),
            Formula::boxed(
                Program::call(ag(2), ag(0)),
                Formula::diamond(Program::Protocol(ProtocolId::LNS), Formula::Ex(None))
            )
        );
        assert_eq!(parse("K[0] T"), Formula::knows(ag(0), ProtocolId::ANY, Formula::Top));
    }

    #[test]
    fn precedence() {
        let x = Formula::Num(ag(0), ag(1));
        let y = Formula::Sec(ag(0), ag(1));
        let z = Formula::Top;
        assert_eq!(
            parse("N(0,1) & S(0,1) | T"),
            Formula::or([Formula::and([x.clone(), y.clone()]), z.clone()])
        );
        assert_eq!(
            parse("N(0,1) -> S(0,1) -> T"),
            Formula::implies(x.clone(), Formula::implies(y.clone(), z))
        );
        assert_eq!(
            parse("~N(0,1) & S(0,1)"),
            Formula::and([Formula::not(x), y])
        );
    }

    #[test]
    fn templates_and_quantifiers() {
        let f = parse("~S(a,b) & all k!=a. some l. S(k,l)");
        assert_eq!(
            f,
            Formula::and([
                Formula::not(Formula::Sec(Term::Caller, Term::Callee)),
                Formula::forall(
                    Binder::except('k', vec![Term::Caller]),
                    Formula::exists(Binder::new('l'), Formula::Sec(Term::Var('k'), Term::Var('l')))
                )
            ])
        );
        assert_eq!(parse("LNS(a,b)"), Formula::Cond(ProtocolId::LNS, Term::Caller, Term::Callee));
    }

    #[test]
    fn programs() {
        let mut r = Registry::new();
        let p = parse_program("(?T ; 01 U 10)* ; ?~Ex", &mut r).unwrap();
        assert_eq!(
            p,
            Program::Seq(vec![
                Program::star(Program::Choice(vec![
                    Program::Seq(vec![Program::test(Formula::Top), Program::call(ag(0), ag(1))]),
                    Program::call(ag(1), ag(0)),
                ])),
                Program::test(Formula::not(Formula::Ex(None))),
            ])
        );
    }

    #[test]
    fn errors() {
        let mut r = Registry::new();
        assert!(matches!(parse_formula("N(0,1) &", &mut r), Err(Error::Parse { .. })));
        assert!(matches!(parse_formula("K[0,Foo] T", &mut r), Err(Error::UnknownProtocol(_))));
        assert!(matches!(parse_formula("[00] T", &mut r), Err(Error::Parse { .. })));
        let err = parse_formula("N(0,1) $", &mut r).unwrap_err();
        assert_eq!(err, Error::parse(7, "unexpected trailing input"));
    }

    #[test]
    fn print_round_trip() {
        let mut r = Registry::new();
        for s in [
            "~S(2,0)",
            "K[1,LNS] Ex",
            "[20]<LNS> Ex",
            "N(0,1) | S(1,0) -> Khat[2,LNS] ~Ex(1)",
            "(all k. S(k,0)) & some j!=0,1. N(j,2)",
            "[(01 U 10)* ; ?T] F",
            "~(N(0,1) & T)",
            "LNS(a,b) & K[a,LNS] [ab] (Ex | some i. some j!=i. N(i,j) & LNS(i,j))",
        ] {
            let f = parse_formula(s, &mut r).unwrap();
            let printed = print_formula(&f, &r);
            let again = parse_formula(&printed, &mut r).unwrap();
            assert_eq!(again, f, "{s} printed as {printed}");
            assert_eq!(print_formula(&again, &r), printed);
        }
    }
}
