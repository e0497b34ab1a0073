//! Binarized neural networks with metaplastic hidden weights, an elastic
//! weight consolidation baseline, a binary quadratic toy problem, and the
//! dataset plumbing shared by the experiments.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bnn;
pub mod data;
pub mod error;
pub mod ewc;
pub mod meta;
pub mod real;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod toy;

pub use bnn::{BnnModel, Mode, Quantization};
pub use error::{Error, IdxError, Result};
pub use real::Real;
pub use tensor::Tensor;
