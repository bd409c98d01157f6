//! Small differentiable substrate: dense layers, MLPs, LSTM / Bi-LSTM,
//! matrix-memory LSTM and self-attention, each with a hand-written backward
//! pass over `f64`.
//!
//! Layers are thin handles holding parameter names; the tensors live in a
//! [`ParameterSet`]. A forward call returns a trace, and the matching
//! `backward` consumes it, accumulates into the set's gradient buffers and
//! returns the gradient with respect to the layer input.

mod attention;
mod checkpoint;
mod dense;
mod gradcheck;
mod lstm;
mod matrix;
mod mlstm;
mod params;

pub use attention::{AttentionTrace, SelfAttention};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use dense::{identity, Activation, Embedding, Linear, Mlp, MlpTrace};
pub use gradcheck::{grad_check, relative_error, Differentiable, GradCheckReport, REL_ERROR_FLOOR};
pub use lstm::{BiLstm, BiLstmTrace, Lstm, LstmState, LstmTrace};
pub use matrix::{add_assign, all_finite, dot, log_sigmoid, sigmoid, softplus, Matrix, Vector};
pub use mlstm::{
    mlstm_step, mlstm_step_backward, MlstmGates, MlstmLayer, MlstmState, MlstmStepGrads, MlstmTrace,
};
pub use params::{Adam, Param, ParameterSet};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
