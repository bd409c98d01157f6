//! Errors that carry the process exit code.

use std::fmt;

use exrec::datamodel::DataError;
use exrec::tensorkit::TensorError;
use exrec::ModelError;

pub const INPUT: u8 = 2;
pub const MISSING: u8 = 3;
pub const INCONSISTENT: u8 = 4;
pub const NUMERIC: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub trait Coded<T> {
    fn code(self, code: u8) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Coded<T> for Result<T, E> {
    fn code(self, code: u8) -> Outcome<T> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

pub fn fail<T>(code: u8, msg: impl fmt::Display) -> Outcome<T> {
    Err(Failure {
        code,
        error: anyhow::anyhow!("{msg}"),
    })
}

fn io_code(e: &std::io::Error) -> u8 {
    if e.kind() == std::io::ErrorKind::NotFound {
        MISSING
    } else {
        INPUT
    }
}

fn tensor_code(e: &TensorError) -> u8 {
    match e {
        TensorError::Numeric(_) => NUMERIC,
        TensorError::Shape(_) | TensorError::Checkpoint { .. } => INCONSISTENT,
        TensorError::EmptyInput(_) => INPUT,
        TensorError::Io(io) => io_code(io),
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let code = match &e {
            ModelError::Config(_) | ModelError::Data(_) => INPUT,
            ModelError::NotTrained(_) => MISSING,
            ModelError::Diverged { .. } => NUMERIC,
            ModelError::Tensor(t) => tensor_code(t),
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        Failure {
            code: tensor_code(&e),
            error: e.into(),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure {
            code: INPUT,
            error: e.into(),
        }
    }
}
