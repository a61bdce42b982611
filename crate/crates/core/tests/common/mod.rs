#![allow(dead_code)]

use std::path::PathBuf;

use gossip_core::graph::{Agent, Call, CallSequence, GossipGraph};
use gossip_core::protocol::{extension, ExtensionReport};
use gossip_core::{builtin_graph, Model, ProtocolId, Registry};

pub fn data(name: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "data", name].iter().collect();
    std::fs::read_to_string(path).unwrap()
}

pub fn model(name: &str) -> Model {
    Model::new(builtin_graph(name).unwrap(), Registry::with_builtins())
}

pub fn report(m: &mut Model, name: &str) -> ExtensionReport {
    let p = m.resolve(name).unwrap();
    extension(m, p).unwrap()
}

pub fn listing(r: &ExtensionReport) -> Vec<String> {
    r.to_text().lines().map(str::to_string).collect()
}

pub fn seqs(items: &[&str]) -> Vec<CallSequence> {
    let mut v: Vec<CallSequence> = items.iter().map(|s| s.parse().unwrap()).collect();
    v.sort();
    v
}

/// LNS terminal histories by direct search over graphs, with success.
pub fn lns_terminals(g: &GossipGraph) -> Vec<(CallSequence, bool)> {
    fn go(g: &GossipGraph, h: &mut Vec<Call>, out: &mut Vec<(CallSequence, bool)>) {
        let mut any = false;
        for a in g.agents() {
            for b in g.agents() {
                if a != b && g.knows_number(a, b) && !g.knows_secret(a, b) {
                    any = true;
                    let c = Call::new(a.index(), b.index()).unwrap();
                    h.push(c);
                    go(&g.apply_call(c).unwrap(), h, out);
                    h.pop();
                }
            }
        }
        if !any {
            out.push((CallSequence(h.clone()), g.all_experts()));
        }
    }
    let mut out = Vec::new();
    go(g, &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// Permission that does not depend on knowledge, for the relation oracle.
pub fn plain_permission(p: ProtocolId, g: &GossipGraph, c: Call) -> bool {
    g.knows_number(c.caller, c.callee)
        && (p == ProtocolId::ANY || !g.knows_secret(c.caller, c.callee))
}

/// One level of the epistemic relation computed pairwise from its
/// inductive clauses.
pub struct RelationLevel {
    pub histories: Vec<(CallSequence, GossipGraph)>,
    /// `related[a][i][j]`
    pub related: Vec<Vec<Vec<bool>>>,
}

/// `~_a^P` for `p ∈ {ANY, LNS}` on levels `0..=depth`.
pub fn relation_oracle(g: &GossipGraph, p: ProtocolId, depth: usize) -> Vec<RelationLevel> {
    let n = g.agent_count();
    let mut levels = vec![RelationLevel {
        histories: vec![(CallSequence::empty(), g.clone())],
        related: vec![vec![vec![true]]; n],
    }];
    for _ in 0..depth {
        let prev = levels.last().unwrap();
        let mut histories = Vec::new();
        let mut parent = Vec::new();
        for (i, (h, gh)) in prev.histories.iter().enumerate() {
            for c in Call::all(n) {
                if plain_permission(p, gh, c) {
                    histories.push((h.extended(c), gh.apply_call(c).unwrap()));
                    parent.push((i, c));
                }
            }
        }
        if histories.is_empty() {
            break;
        }
        let m = histories.len();
        let mut related = vec![vec![vec![false; m]; m]; n];
        for (a, rel) in related.iter_mut().enumerate() {
            let agent = Agent::from(a);
            for x in 0..m {
                for y in 0..m {
                    let ((px, cx), (py, cy)) = (parent[x], parent[y]);
                    if !prev.related[a][px][py] {
                        continue;
                    }
                    let (ix, iy) = (cx.involves(agent), cy.involves(agent));
                    rel[x][y] = match (ix, iy) {
                        (false, false) => true,
                        (true, true) if cx == cy => {
                            let partner = if cx.caller == agent { cx.callee } else { cx.caller };
                            let (gx, gy) = (&prev.histories[px].1, &prev.histories[py].1);
                            gx.numbers(partner) == gy.numbers(partner)
                                && gx.secrets(partner) == gy.secrets(partner)
                        }
                        _ => false,
                    };
                }
            }
        }
        levels.push(RelationLevel { histories, related });
    }
    levels
}

pub fn small_graph() -> impl proptest::strategy::Strategy<Value = GossipGraph> {
    use proptest::prelude::*;
    (1usize..=4, any::<u64>(), 1u32..=9).prop_map(|(n, seed, tenth)| {
        GossipGraph::random(n, seed, f64::from(tenth) / 10.0).unwrap()
    })
}

/// Column names of a CSV header line, honouring double quotes.
pub fn csv_header(line: &str) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut quoted = false;
    for ch in line.chars() {
        match ch {
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(String::new()),
            _ => out.last_mut().unwrap().push(ch),
        }
    }
    out
}

/// Renders `compare` for the columns named in a fixture's header.
pub fn table_for(graph: &str, fixture: &str, after: Option<&str>) -> (String, String) {
    let want = data(fixture);
    let columns = csv_header(want.lines().next().unwrap());
    let mut m = model(graph);
    let ids: Vec<ProtocolId> = columns[1..].iter().map(|c| m.resolve(c).unwrap()).collect();
    let after: Option<CallSequence> = after.map(|s| s.parse().unwrap());
    let got = gossip_core::protocol::compare(&mut m, &ids, after.as_ref()).unwrap().to_csv();
    (got, want)
}
