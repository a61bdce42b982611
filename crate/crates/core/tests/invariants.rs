mod common;

use common::*;
use gossip_core::graph::{Agent, AgentSet, Call, CallSequence, GossipGraph, Permutation};
use gossip_core::logic::parse_formula_with;
use gossip_core::strengthening::{
    check_equivalence_theorem, check_monotonicity_instance, extension_included, StrengtheningKind as K,
};
use gossip_core::{Model, ProtocolId, Registry};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 200,
        ..ProptestConfig::default()
    }
}

/// A random possible call sequence of length at most `len`, from choices.
fn walk(g: &GossipGraph, choices: &[u8]) -> CallSequence {
    let mut cur = g.clone();
    let mut seq = CallSequence::empty();
    for &k in choices {
        let possible: Vec<Call> = Call::all(g.agent_count())
            .into_iter()
            .filter(|&c| cur.is_possible(c).unwrap())
            .collect();
        if possible.is_empty() {
            break;
        }
        let c = possible[k as usize % possible.len()];
        cur = cur.apply_call(c).unwrap();
        seq.push(c);
    }
    seq
}

fn permutation(n: usize, seed: u64) -> Permutation {
    let all = Permutation::all(n);
    all[(seed % all.len() as u64) as usize].clone()
}

fn pure_numbers(g: &GossipGraph, a: Agent) -> bool {
    g.agents().any(|b| b != a && g.knows_number(b, a) && !g.knows_secret(b, a))
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn calls_preserve_graph_invariants(g in small_graph(), choices in prop::collection::vec(any::<u8>(), 0..8)) {
        let seq = walk(&g, &choices);
        let mut cur = g.clone();
        for &c in seq.calls() {
            let next = cur.apply_call(c).unwrap();
            for a in g.agents() {
                prop_assert!(next.secrets(a).contains(a));
                prop_assert!(next.secrets(a).is_subset(next.numbers(a)));
                prop_assert!(cur.numbers(a).is_subset(next.numbers(a)));
                prop_assert!(cur.secrets(a).is_subset(next.secrets(a)));
            }
            prop_assert_eq!(next.numbers(c.caller), next.numbers(c.callee));
            prop_assert_eq!(next.secrets(c.caller), cur.secrets(c.caller).union(cur.secrets(c.callee)));
            cur = next;
        }
        for a in g.agents() {
            if !pure_numbers(&g, a) {
                prop_assert!(!pure_numbers(&cur, a));
            }
        }
    }

    #[test]
    fn permutation_equivariance(g in small_graph(), choices in prop::collection::vec(any::<u8>(), 0..6), seed in any::<u64>()) {
        let seq = walk(&g, &choices);
        let j = permutation(g.agent_count(), seed);
        let left = g.apply_sequence(&seq).unwrap().permute(&j).unwrap();
        let right = g.permute(&j).unwrap().apply_sequence(&seq.permute(&j)).unwrap();
        prop_assert_eq!(left, right);
        let back = g.permute(&j).unwrap().permute(&j.inverse()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn generated_graphs_are_initial(n in 1usize..=4, seed in any::<u64>()) {
        let g = GossipGraph::random(n, seed, 0.3).unwrap();
        prop_assert!(g.is_initial());
        prop_assert_eq!(&g, &GossipGraph::random(n, seed, 0.3).unwrap());
        for a in g.agents() {
            prop_assert_eq!(g.secrets(a), AgentSet::singleton(a));
        }
        let text = g.to_string();
        prop_assert_eq!(text.parse::<GossipGraph>().unwrap(), g);
    }

    #[test]
    fn partition_matches_pairwise_oracle(g in small_graph(), any_protocol in any::<bool>()) {
        let p = if any_protocol { ProtocolId::ANY } else { ProtocolId::LNS };
        let depth = if any_protocol { 3 } else { 6 };
        let oracle = relation_oracle(&g, p, depth);
        let mut m = Model::new(g.clone(), Registry::new());
        let tree = m.tree_to_depth(p, depth).unwrap().clone();
        for (k, level) in oracle.iter().enumerate() {
            let states: Vec<_> = level.histories.iter().map(|(h, _)| m.state_of(h).unwrap()).collect();
            prop_assert_eq!(tree.levels()[k].len(), states.len());
            for a in 0..g.agent_count() {
                let r = &level.related[a];
                for x in 0..states.len() {
                    prop_assert!(r[x][x]);
                    for y in 0..states.len() {
                        prop_assert_eq!(r[x][y], r[y][x]);
                        for z in 0..states.len() {
                            prop_assert!(!(r[x][y] && r[y][z]) || r[x][z]);
                        }
                        let same = tree.cell(a, states[x]) == tree.cell(a, states[y]);
                        prop_assert_eq!(same, r[x][y], "agent {} {} {}", a, level.histories[x].0, level.histories[y].0);
                    }
                }
                for cell in tree.levels()[k].cells(a) {
                    let first = cell[0];
                    for &t in cell.iter() {
                        prop_assert_eq!(m.depth(t), k);
                        prop_assert_eq!(m.num(t, Agent::from(a)), m.num(first, Agent::from(a)));
                        prop_assert_eq!(m.sec(t, Agent::from(a)), m.sec(first, Agent::from(a)));
                    }
                }
            }
        }
    }

    #[test]
    fn introspection_is_valid(g in small_graph()) {
        let mut m = Model::new(g, Registry::new());
        let text = "all i. all j!=i. (S(i,j) -> K[i,LNS] S(i,j)) & (~S(i,j) -> K[i,LNS] ~S(i,j)) \
                    & (N(i,j) -> K[i,LNS] N(i,j)) & (~N(i,j) -> K[i,LNS] ~N(i,j))";
        let f = parse_formula_with(text, &mut |h| m.registry_mut().resolve(h)).unwrap();
        let states: Vec<_> = m.tree(ProtocolId::LNS).unwrap().states().collect();
        for s in states {
            prop_assert!(m.eval_at(&f, s).unwrap(), "{}", m.history(s));
        }
    }

    #[test]
    fn strengthenings_shrink(g in small_graph()) {
        let mut m = Model::new(g, Registry::new());
        for base in ["LNS", "LNS^dia"] {
            let p = m.resolve(base).unwrap();
            let mut ids = Vec::new();
            for kind in [K::HardLookahead, K::SoftLookahead, K::HardOneStep, K::SoftOneStep] {
                let q = gossip_core::strengthening::strengthen(m.registry_mut(), p, kind).unwrap();
                prop_assert_eq!(extension_included(&mut m, q, p).unwrap(), None);
                ids.push(q);
            }
            prop_assert_eq!(extension_included(&mut m, ids[0], ids[1]).unwrap(), None);
            prop_assert_eq!(extension_included(&mut m, ids[2], ids[3]).unwrap(), None);
        }
    }

    #[test]
    fn soft_one_step_is_monotone(g in small_graph()) {
        let mut m = Model::new(g, Registry::new());
        for q in ["LNS^bdia", "LNS^sq", "LNS^bsq"] {
            let q = m.resolve(q).unwrap();
            let out = check_monotonicity_instance(&mut m, ProtocolId::LNS, q, K::SoftOneStep).unwrap();
            prop_assert!(out.holds);
        }
    }

    #[test]
    fn knowledge_is_monotone_in_the_protocol(g in small_graph()) {
        // LNS^dia ⊆ LNS, so K^LNS φ → K^{LNS^dia} φ where LNS^dia is followed
        let mut m = Model::new(g, Registry::new());
        let small = m.resolve("LNS^dia").unwrap();
        let text = "all i. (K[i,LNS] Ex -> K[i,LNS^dia] Ex) & (K[i,LNS] <LNS> Ex -> K[i,LNS^dia] <LNS> Ex)";
        let f = parse_formula_with(text, &mut |h| m.registry_mut().resolve(h)).unwrap();
        let states: Vec<_> = m.tree(small).unwrap().states().collect();
        for s in states {
            prop_assert!(m.eval_at(&f, s).unwrap());
        }
    }

    #[test]
    fn lns_terminals_match_direct_search(g in small_graph()) {
        let mut m = Model::new(g.clone(), Registry::new());
        let r = gossip_core::extension(&mut m, ProtocolId::LNS).unwrap();
        let ours: Vec<(CallSequence, bool)> = r.terminals.iter().map(|t| (t.history.clone(), t.successful)).collect();
        prop_assert_eq!(ours, lns_terminals(&g));
        let n = g.agent_count();
        prop_assert!(r.histories.iter().all(|h| h.calls().len() <= n * (n - 1) / 2));
    }
}

#[test]
fn equivalence_on_random_four_agent_graphs() {
    for seed in 0..100 {
        let g = GossipGraph::random(4, seed, 0.3).unwrap();
        let mut m = Model::new(g.clone(), Registry::new());
        for base in [ProtocolId::LNS, m.resolve("LNS^dia").unwrap()] {
            let out = check_equivalence_theorem(&mut m, base, 1).unwrap();
            assert!(out.hard && out.soft, "seed {seed} graph {g}");
        }
    }
}

#[test]
fn equivalence_on_builtins() {
    for name in ["three", "n", "diamond", "spaceship", "candy"] {
        let mut m = model(name);
        let dia = m.resolve("LNS^dia").unwrap();
        let ks: &[usize] = if name == "candy" { &[1] } else { &[1, 2, 3] };
        for &k in ks {
            for base in [ProtocolId::LNS, dia] {
                let out = check_equivalence_theorem(&mut m, base, k).unwrap();
                assert!(out.hard && out.soft, "{name} k={k}");
            }
        }
    }
}

#[test]
fn soft_limit_is_a_fixpoint() {
    let mut m = model("diamond");
    let limit = m.resolve("LNS^dia*").unwrap();
    let target = m.limit_target(limit).unwrap();
    assert_eq!(m.protocol_name(target), "LNS^dia2");
    let r = report(&mut m, "LNS^dia*");
    assert_eq!((r.successful_count(), r.unsuccessful_count()), (48, 32));
    let once_more = gossip_core::strengthening::strengthen(m.registry_mut(), target, K::SoftOneStep).unwrap();
    assert_eq!(m.terminals(once_more).unwrap(), m.terminals(target).unwrap());
}
