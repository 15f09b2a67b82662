//! Low-bit number formats and per-vector scaled quantization.

mod format;
mod vsq;

pub use format::{parse_optional_format, Code, FormatKind, NumberFormat, Rounding};
pub use vsq::{
    compute_scale, dequantize_vector, fake_quantize, fake_quantize_activations, quantize_tensor,
    quantize_vector, QuantizedTensor, QuantizedVector,
};
