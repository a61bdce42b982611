//! Protocol-dependent knowledge: execution trees, epistemic cells and
//! formula evaluation.

mod dot;
mod model;
mod tree;

pub use dot::to_dot;
pub use model::{Model, ModelConfig, NodeId, StateId};
pub use tree::{Level, Tree};
