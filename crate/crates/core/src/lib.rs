//! Cross-modal self-supervised distillation from a frozen teacher embedding
//! space into a trainable multi-channel time-series student.
//!
//! The student learns to reproduce, over a FIFO queue of teacher embeddings,
//! the temperature-scaled similarity distribution of its paired teacher
//! embedding. See the crate README for the file formats and the CLI.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
mod binio;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod losses;
pub mod probe;
pub mod queue;
pub mod tensor;
pub mod trainer;

pub use dataio::{Dataset, PairedSample, SyntheticConfig};
pub use encoder::{Arch, ImuWindow, Pooling, StudentGrad, StudentParams};
pub use error::{Error, Result};
pub use exec::Exec;
pub use losses::{LossKind, LossOutput, Temperatures};
pub use queue::{BatchPositions, InstanceQueue};
pub use tensor::{ProbVec, RealVec, UnitVec};
