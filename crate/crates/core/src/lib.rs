//! Bidirectional spectral state-space classifier for hyperspectral patches,
//! built on a small reverse-mode tensor core.

pub mod block;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod efficiency;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod real;
pub mod spatial;
pub mod sweep;
pub mod tape;
pub mod tensor;
pub mod train;

pub use block::{BlockConfig, BlockParams, ReverseMode, SequenceMode};
pub use error::{Error, Result};
pub use model::{Ablation, ModelConfig, ModelParams};
pub use real::{DType, Real};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
