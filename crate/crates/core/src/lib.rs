//! Fine-tuning with a zero-initialized softmax head and decoupled
//! head/backbone learning rates, plus anytime deployment evaluation.

pub mod adp;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod optim;
pub mod report;
pub mod tensor;
pub mod transfer;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
