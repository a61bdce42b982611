use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("agent {agent} out of range for a graph with {n} agents")]
    AgentOutOfRange { agent: usize, n: usize },

    #[error("a call needs two distinct agents, got {0}{0}")]
    SelfCall(usize),

    #[error("call {call} at position {index} is not possible")]
    ImpossibleCall { call: String, index: usize },

    #[error("invalid gossip graph: {0}")]
    InvalidGraph(String),

    #[error("not a permutation of 0..{n}: {detail}")]
    NotAPermutation { n: usize, detail: String },

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),

    #[error("protocol `{0}` refers to itself")]
    Stratification(String),

    #[error("free variable `{0}` in a closed formula")]
    FreeVariable(String),

    #[error("budget exceeded while evaluating `{protocol}`: {detail}")]
    BudgetExceeded { protocol: String, detail: String },

    #[error("{0}")]
    Input(String),
}

impl Error {
    pub(crate) fn parse(pos: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            pos,
            msg: msg.into(),
        }
    }

    pub fn is_budget(&self) -> bool {
        matches!(self, Error::BudgetExceeded { .. })
    }
}
