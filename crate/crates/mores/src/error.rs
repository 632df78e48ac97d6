use std::io;
use std::path::PathBuf;

/// Structural problems in a checkpoint or index file.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("tensor dims {0:?} overflow or exceed the file")]
    DimOverflow(Vec<u64>),
    #[error("tensor name is not UTF-8")]
    Name,
    #[error("unknown strategy code {0}")]
    Strategy(u8),
    #[error("{0} trailing bytes after the last record")]
    Trailing(usize),
    #[error("offset {offset} for {id:?} points outside the file")]
    Offset { id: String, offset: u64 },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] mores_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const STALE: i32 = 4;
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => exit::USAGE,
            Error::Model(mores_core::Error::StaleIndex { .. }) => exit::STALE,
            _ => exit::DATA,
        }
    }
}
