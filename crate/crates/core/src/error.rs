use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("bad magic at byte offset {offset}: expected \"SEGT\"")]
    BadMagic { offset: usize },
    #[error("unsupported version {version} at byte offset {offset}")]
    UnsupportedVersion { version: u8, offset: usize },
    #[error("unsupported dtype code {code} at byte offset {offset}")]
    UnsupportedDtype { code: u8, offset: usize },
    #[error("truncated data at byte offset {offset}: need {needed} more bytes, {available} available")]
    TruncatedPayload {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{count} trailing bytes after tensor ending at byte offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("tensor dims {dims_product} elements overflow addressable size")]
    DimsOverflow { dims_product: u128 },
    #[error("tensor has unexpected layout: {0}")]
    Layout(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class id {value} out of range for {num_classes} classes")]
    ClassOutOfRange { value: u8, num_classes: usize },
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("confusion matrix has no evaluable pixels")]
    EmptyMatrix,
    #[error("all pixel counts are zero")]
    AllZeroCounts,

    #[error("loss requires class weights")]
    MissingWeights,
    #[error("loss requires a confusion matrix")]
    MissingConfusion,
    #[error("every pixel is ignored")]
    AllIgnored,

    #[error("empty prediction list")]
    EmptyList,
    #[error("class count mismatch: expected {expected}, found {found}")]
    ClassCountMismatch { expected: usize, found: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("parameter name mismatch: {0}")]
    NameMismatch(String),
    #[error("non-finite value in parameter `{name}` at index {index}")]
    NonFiniteInput { name: String, index: usize },

    #[error("line {line}: source id {source_id} mapped more than once")]
    DuplicateSource { line: usize, source_id: u32 },
    #[error("line {line}: id {value} outside 0..=255")]
    IdOutOfRange { line: usize, value: i64 },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
}
