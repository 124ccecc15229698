use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApeError {
    #[error("column role error: {0}")]
    Role(String),
    #[error("parse error at row {row}, column `{column}`: {msg}")]
    Parse {
        row: usize,
        column: String,
        msg: String,
    },
    #[error("size error: {0}")]
    Size(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("singular design: column `{column}` is linearly dependent on earlier columns")]
    Singular { column: String },
    #[error("knot placement failed: {0}")]
    Knot(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("{failed} of {total} bootstrap resamples failed (limit 10%); last error: {last}")]
    Aggregate {
        failed: usize,
        total: usize,
        last: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse error class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl ApeError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ApeError::Parameter(_) | ApeError::Precondition(_) | ApeError::Range(_) => {
                ErrorClass::Usage
            }
            ApeError::Role(_)
            | ApeError::Parse { .. }
            | ApeError::Size(_)
            | ApeError::Shape(_)
            | ApeError::Io(_) => ErrorClass::Data,
            ApeError::Singular { .. }
            | ApeError::Knot(_)
            | ApeError::Degenerate(_)
            | ApeError::Aggregate { .. } => ErrorClass::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, ApeError>;
