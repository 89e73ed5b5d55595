use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("prefix length {requested} exceeds depth {depth} of vertex {vertex}")]
    PrefixOutOfRange {
        vertex: String,
        depth: u32,
        requested: u32,
    },

    #[error("leaf set is empty")]
    EmptyLeafSet,

    #[error("leaves have mixed depths ({0} and {1})")]
    MixedDepths(u32, u32),

    #[error("state {state} is outside the state space of the {family} family")]
    StateSpace { family: &'static str, state: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("custom kernel walk expectation needs a Monte Carlo sample budget")]
    MissingBudget,

    #[error("no exact one-step walk operator for the {0} family")]
    NoExactOperator(&'static str),

    #[error("generation {requested} exceeds the full-tree cap of {cap} ({} needed)", bytes_text(*.bytes))]
    MemoryBudget { requested: u32, cap: u32, bytes: u64 },

    #[error("at least {required} replicates are needed, got {got}")]
    TooFewReplicates { required: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("atom {0} is not a nonnegative integer")]
    NonIntegerAtom(f64),

    #[error("law/state mismatch: {0}")]
    LawMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed generation dump: {0}")]
    Dump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn bytes_text(bytes: u64) -> String {
    if bytes == u64::MAX {
        "more than 2^64 bytes".into()
    } else {
        format!("{bytes} bytes")
    }
}
