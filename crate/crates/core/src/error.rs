use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("reference distribution has non-positive entry at index {0}")]
    NonPositive(usize),

    #[error("invalid belief: {0}")]
    InvalidBelief(String),

    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),

    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),

    #[error("symbol {symbol} out of range for alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },

    #[error("state index {index} out of range for {m} states")]
    StateOutOfRange { index: usize, m: usize },

    #[error("invalid state space: {0}")]
    InvalidStateSpace(String),

    #[error("invalid likelihood table: {0}")]
    InvalidTable(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("agent {0} has no neighbors")]
    IsolatedNode(usize),

    #[error("invalid contact matrix: {0}")]
    InvalidContact(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("invalid gossip event: {0}")]
    InvalidEvent(String),

    #[error("slot mismatch: state is at slot {expected}, input is for slot {got}")]
    SlotMismatch { expected: u64, got: u64 },

    #[error("quantity is undefined at slot 0")]
    ZeroSlot,

    #[error("log covers {available} slots, {required} required")]
    IncompleteLog { required: u64, available: u64 },

    #[error("fit window {start}..={end} invalid: {reason}")]
    InvalidWindow {
        start: u64,
        end: u64,
        reason: String,
    },

    #[error("every point of the fit window is saturated at the floor")]
    SaturatedWindow,

    #[error("true state is not globally identifiable")]
    NotIdentifiable,

    #[error("slack must be positive and finite, got {0}")]
    InvalidSlack(f64),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}
