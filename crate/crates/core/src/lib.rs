//! Sparsify, decompose and quantize weight matrices.
//!
//! Weights are pruned to an N:M structured pattern, split per block into a
//! small outlier tensor and a larger inlier tensor (both N:M structured), and
//! each part is quantized with per-vector scale factors in its own number
//! format. Quality is measured by fake-quantized reference products; cost is
//! modeled analytically.

pub mod codec;
pub mod costmodel;
pub mod decompose;
pub mod error;
pub mod io;
mod linalg;
pub mod pipeline;
pub mod sparsify;
pub mod synth;
pub mod tensor;

pub use error::{Result, SdqError};
