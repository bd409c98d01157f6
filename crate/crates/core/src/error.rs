use thiserror::Error;

use crate::datamodel::DataError;
use crate::tensorkit::TensorError;

/// Errors raised while building, training or applying the learned models.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} has not been trained")]
    NotTrained(&'static str),
    #[error("{stage} training diverged at epoch {epoch}: {msg}")]
    Diverged {
        stage: &'static str,
        epoch: usize,
        msg: String,
    },
}
