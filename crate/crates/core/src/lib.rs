//! Biased entry-wise sampling of symmetric third-order tensors.
//!
//! Sparsification of implicit moment tensors, weighted ALS completion from
//! sampled entries, and a two-pass robust factorization built on the same
//! sampling machinery.

pub mod completion;
pub mod config;
pub mod error;
pub mod experiment;
pub mod factorize;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod rtpm;
pub mod sampling;
pub mod sparsify;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{CpFactors, DenseTensor3, FaceNorm, SampleRecord, SampledTensor, TensorOp};
