pub mod datamodel;
pub mod diagnostics;
pub mod enhancer;
mod error;
pub mod evalkit;
pub mod filter;
pub mod kcmp;
pub mod pipeline;
pub mod reranker;
pub mod stats;
pub mod tensorkit;

pub use error::ModelError;
