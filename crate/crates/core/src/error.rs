use thiserror::Error;

/// Errors produced by codecs, quantizers, layout math, and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value{}", .index.map(|i| format!(" at element {i}")).unwrap_or_default())]
    NonFinite { index: Option<usize> },

    #[error("truncated: requested {requested} nibbles but only {available} available")]
    Truncated { requested: usize, available: usize },

    #[error("bad magic {0:02x?}, expected \"NVT1\"")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),

    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),

    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("invalid scale byte 0x{0:02x} (NaN pattern)")]
    InvalidScale(u8),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("block misalignment: inner axis {inner} is not divisible by {block}")]
    BlockMisalignment { inner: usize, block: usize },

    #[error("rank {rank} > 0 but LoRA factors are missing")]
    MissingLora { rank: usize },

    #[error("chunk {0} not present in cache")]
    MissingChunk(usize),

    #[error("layout divisibility violated: {0}")]
    Divisibility(String),

    #[error("index {index} out of range [0, {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("halo smaller than receptive field: halo {halo} < {required}")]
    HaloTooSmall { halo: usize, required: usize },

    #[error("block position {global} is not owned by rank {rank} (owns [{start}, {end}))")]
    ForeignPosition {
        global: usize,
        rank: usize,
        start: usize,
        end: usize,
    },

    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),

    #[error("inconsistent measurements: {0}")]
    InconsistentMeasurements(String),

    #[error("prompt switch to chunk {requested} precedes current shot start {shot_start}")]
    ShotRewind { requested: usize, shot_start: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    FileIo {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
