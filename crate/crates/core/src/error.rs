use thiserror::Error;

/// Errors raised by the emulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: &'static str, reason: String },

    #[error("allocation failed: requested {requested} synapses, largest free range is {available}")]
    Allocation { requested: usize, available: usize },

    #[error("spike id {spike} outside partition of length {len}")]
    CoActivation { spike: usize, len: usize },

    #[error("pairing violation on partition {partition}: expected a {expected} instruction, got {got}")]
    Pairing {
        partition: u32,
        expected: &'static str,
        got: &'static str,
    },

    #[error("partition {0} is not live")]
    StalePartition(u32),

    #[error("partition belongs to core {partition_core}, not core {core}")]
    WrongCore { partition_core: u32, core: u32 },

    #[error("invalid spike pattern: {0}")]
    Pattern(String),

    #[error("decode error at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
