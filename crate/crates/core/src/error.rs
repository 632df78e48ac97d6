use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("mask excludes every position in row {row}")]
    DegenerateMask { row: usize },

    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    Vocab { id: u32, vocab_size: usize },

    #[error("sequence length {len} outside 1..={max}")]
    Length { len: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gradient tape: {0}")]
    Tape(String),

    #[error("duplicate document id {0:?}")]
    DuplicateDoc(String),

    #[error("documents missing from index: {0:?}")]
    MissingDocs(Vec<String>),

    #[error("index built for model {index:#018x}, loaded model is {model:#018x}")]
    StaleIndex { index: u64, model: u64 },

    #[error("index holds {found} records, {wanted} requested")]
    Strategy { found: &'static str, wanted: &'static str },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
