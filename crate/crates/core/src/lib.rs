//! Dynamic gossip: graphs and calls, a logic of protocol-dependent
//! knowledge, execution trees, and strengthenings of gossip protocols.

pub mod error;
pub mod graph;
pub mod logic;
pub mod protocol;
pub mod registry;
pub mod semantics;
pub mod strengthening;

pub use error::{Error, Result};
pub use graph::{Agent, AgentSet, Call, CallSequence, GossipGraph, GossipState, Permutation};
pub use logic::{parse_formula, parse_program, print_formula, print_program, Formula, Program};
pub use protocol::{extension, ExtensionReport, Success};
pub use registry::{ProtocolId, Registry};
pub use semantics::{Model, ModelConfig, StateId};
pub use strengthening::{IterationSpec, StrengtheningKind};

/// Names accepted by [`builtin_graph`].
pub const BUILTIN_GRAPHS: [(&str, &str); 5] = [
    ("three", "Ab Bc bC"),
    ("n", "A B aC abD"),
    ("diamond", "A B abC abD"),
    ("spaceship", "Ab Bc C bD"),
    ("candy", "Acd Bc C D dE cdF"),
];

pub fn builtin_graph(name: &str) -> Option<GossipGraph> {
    BUILTIN_GRAPHS
        .iter()
        .find(|(k, _)| *k == name)
        .map(|(_, text)| text.parse().expect("builtin graphs are valid"))
}
