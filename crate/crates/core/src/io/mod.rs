//! On-disk matrices, run manifests and line-oriented reports.

mod container;
mod manifest;
mod report;

pub use container::{decode_matrix, encode_matrix, load_matrix, save_matrix, Dtype, HEADER_LEN, MAGIC, VERSION};
pub use manifest::{GenerateSpec, Inputs, Outputs, Overrides, RunManifest};
pub use report::Report;
