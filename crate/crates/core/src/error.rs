use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty dimension: {rows}x{cols}")]
    EmptyDimension { rows: usize, cols: usize },
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("negative value at flat index {index}")]
    NegativeValue { index: usize },
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("dimension overflow")]
    DimensionOverflow,
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("all clustering weights are zero")]
    ZeroTotalWeight,
    #[error("empty input")]
    EmptyInput,
    #[error("oracle size guard exceeded: n = {n}, limit {limit}")]
    OracleTooLarge { n: usize, limit: usize },
    #[error("group size {group_size} does not divide {cols} columns")]
    GroupSize { group_size: usize, cols: usize },
    #[error("mask covers the whole of channel {row} group {group}")]
    MaskedChannel { row: usize, group: usize },
    #[error("sparse budget of {marked} covers the entire matrix of {total} weights")]
    SparseBudget { marked: usize, total: usize },
    #[error("index {index} out of range for {bits}-bit codes")]
    IndexOverflow { index: u16, bits: u8 },
    #[error("non-zero padding bits in row {row}")]
    NonZeroPadding { row: usize },
    #[error("invalid CSR structure: {0}")]
    InvalidCsr(&'static str),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("zero memory operations")]
    ZeroMemoryOps,
    #[error("zero compute operations")]
    ZeroFlops,
    #[error("invalid hardware profile: {0}")]
    InvalidProfile(&'static str),
}
