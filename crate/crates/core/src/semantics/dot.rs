use std::fmt::Write;

use crate::error::Result;
use crate::graph::Agent;
use crate::registry::ProtocolId;

use super::{Model, StateId};

/// Renders the execution tree of `p` in DOT: call edges are solid, the
/// cells of `agent` are dotted undirected edges, terminal histories carry
/// ✓ or ×. With `depth` only the first `depth` calls are drawn.
pub fn to_dot(model: &mut Model, p: ProtocolId, agent: Agent, depth: Option<usize>) -> Result<String> {
    let tree = match depth {
        Some(d) => model.tree_to_depth(p, d + 1)?.clone(),
        None => model.tree(p)?.clone(),
    };
    let shown = depth.map_or(tree.levels().len(), |d| (d + 1).min(tree.levels().len()));
    let name = |s: StateId| format!("s{}", s.0);

    let mut out = String::new();
    writeln!(out, "digraph \"{}\" {{", model.protocol_name(p)).unwrap();
    writeln!(out, "  node [shape=box, fontname=monospace];").unwrap();
    for (l, level) in tree.levels()[..shown].iter().enumerate() {
        for (i, &s) in level.states().iter().enumerate() {
            let mut label = model.graph(s).to_string();
            let children = level.children(i);
            if children.as_ref().is_some_and(|r| r.is_empty()) {
                label.push_str(if model.all_experts(s) { "\\n✓" } else { "\\n×" });
            }
            writeln!(out, "  {} [label=\"{}\"];", name(s), label).unwrap();
            if l + 1 < shown {
                if let Some(range) = children {
                    for j in range {
                        let t = tree.levels()[l + 1].states()[j];
                        let call = model.last_call(t).expect("non-root");
                        writeln!(out, "  {} -> {} [label=\"{}\"];", name(s), name(t), call).unwrap();
                    }
                }
            }
        }
    }
    for level in &tree.levels()[..shown] {
        for cell in level.cells(agent.index()) {
            for (x, &s) in cell.iter().enumerate() {
                for &t in &cell[x + 1..] {
                    writeln!(
                        out,
                        "  {} -> {} [style=dotted, dir=none, label=\"{}\"];",
                        name(s),
                        name(t),
                        agent
                    )
                    .unwrap();
                }
            }
        }
    }
    out.push_str("}\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;

    fn dotted(text: &str) -> usize {
        text.lines().filter(|l| l.contains("style=dotted")).count()
    }

    #[test]
    fn figure_one_export() {
        let mut m = Model::new("Ab Bc bC".parse().unwrap(), Registry::new());
        let out = to_dot(&mut m, ProtocolId::LNS, Agent(0), None).unwrap();
        assert_eq!(out.lines().filter(|l| l.contains("[label=") && !l.contains("->")).count(), 12);
        assert_eq!(dotted(&out), 4);
        assert_eq!(out.matches("✓").count(), 3);
        assert_eq!(out.matches("×").count(), 2);
    }

    #[test]
    fn depth_caps_the_export() {
        let mut m = Model::new("A B aC abD".parse().unwrap(), Registry::new());
        let out = to_dot(&mut m, ProtocolId::LNS, Agent(2), Some(2)).unwrap();
        let nodes = out.lines().filter(|l| l.contains("[label=") && !l.contains("->")).count();
        assert_eq!(nodes, 1 + 3 + 8);
        let s30 = m.state_of(&"30".parse().unwrap()).unwrap();
        let s31 = m.state_of(&"31".parse().unwrap()).unwrap();
        assert!(out.contains(&format!("s{} -> s{} [style=dotted", s30.0, s31.0)));
        let root = to_dot(&mut m, ProtocolId::LNS, Agent(0), Some(0)).unwrap();
        assert!(!root.contains("->"));
    }
}
