//! Per-vector scaled quantization: each Q-Vector of consecutive values along
//! a row shares one scale factor, which may itself be stored in a low-bit
//! format.

use rayon::prelude::*;

use super::format::{Code, NumberFormat, Rounding};
use crate::error::{Result, SdqError};
use crate::tensor::{DenseMatrix, SparsityPattern};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    pub codes: Vec<Code>,
    /// Effective scale used for decoding (already snapped to the scale grid
    /// when a scale format is set).
    pub scale: f64,
    pub scale_code: Option<Code>,
    pub data_format: NumberFormat,
    pub scale_format: Option<NumberFormat>,
}

/// Ideal scale mapping the vector's largest magnitude onto the format's
/// largest magnitude. All-zero vectors get scale 1.
pub fn compute_scale(v: &[f64], data_format: &NumberFormat) -> f64 {
    let amax = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if amax == 0.0 {
        1.0
    } else {
        amax / data_format.max_value()
    }
}

/// Quantizes one vector. A quantized scale is rounded up onto its grid so
/// that `|v_i| / scale` never exceeds the data format's range.
pub fn quantize_vector(
    v: &[f64],
    data_format: NumberFormat,
    scale_format: Option<NumberFormat>,
) -> QuantizedVector {
    let ideal = compute_scale(v, &data_format);
    let (scale, scale_code) = match scale_format {
        None => (ideal, None),
        Some(sf) => {
            let code = sf.round(ideal, Rounding::Up);
            (sf.decode(code), Some(code))
        }
    };
    let codes = v.iter().map(|x| data_format.round_nearest(x / scale)).collect();
    QuantizedVector {
        codes,
        scale,
        scale_code,
        data_format,
        scale_format,
    }
}

pub fn dequantize_vector(q: &QuantizedVector) -> Vec<f64> {
    q.codes
        .iter()
        .map(|&c| q.data_format.decode(c) * q.scale + 0.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    qvs: usize,
    vectors: Vec<QuantizedVector>,
    sparsity: Option<SparsityPattern>,
}

impl QuantizedTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn q_vector_size(&self) -> usize {
        self.qvs
    }

    pub fn vectors(&self) -> &[QuantizedVector] {
        &self.vectors
    }

    /// Set when the tensor holds the packed values of an N:M matrix.
    pub fn sparsity(&self) -> Option<SparsityPattern> {
        self.sparsity
    }

    pub fn with_sparsity(mut self, pattern: SparsityPattern) -> Self {
        self.sparsity = Some(pattern);
        self
    }

    pub fn dequantize(&self) -> DenseMatrix {
        let data: Vec<f64> = self.vectors.iter().flat_map(dequantize_vector).collect();
        DenseMatrix::new(self.rows, self.cols, data).expect("decoded values are finite")
    }
}

/// Tiles each row into Q-Vectors of `qvs` values and quantizes each one.
pub fn quantize_tensor(
    w: &DenseMatrix,
    qvs: usize,
    data_format: NumberFormat,
    scale_format: Option<NumberFormat>,
) -> Result<QuantizedTensor> {
    if qvs == 0 {
        return Err(SdqError::InvalidArgument("q-vector size must be positive".into()));
    }
    if !w.cols().is_multiple_of(qvs) {
        return Err(SdqError::DimensionMismatch(format!(
            "{} columns are not divisible by q-vector size {qvs}",
            w.cols()
        )));
    }
    let vectors = w
        .data()
        .par_chunks(qvs)
        .map(|v| quantize_vector(v, data_format, scale_format))
        .collect();
    Ok(QuantizedTensor {
        rows: w.rows(),
        cols: w.cols(),
        qvs,
        vectors,
        sparsity: None,
    })
}

/// Quantize then dequantize.
pub fn fake_quantize(
    w: &DenseMatrix,
    qvs: usize,
    data_format: NumberFormat,
    scale_format: Option<NumberFormat>,
) -> Result<DenseMatrix> {
    Ok(quantize_tensor(w, qvs, data_format, scale_format)?.dequantize())
}

/// Fake-quantizes activations laid out `in_features × batch`, with Q-Vectors
/// running down each column (the reduction axis) and per-call scales.
pub fn fake_quantize_activations(
    x: &DenseMatrix,
    qvs: usize,
    data_format: NumberFormat,
    scale_format: Option<NumberFormat>,
) -> Result<DenseMatrix> {
    Ok(fake_quantize(&x.transpose(), qvs, data_format, scale_format)?.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    const INT4: NumberFormat = NumberFormat::INT4;

    #[test]
    fn scale_examples() {
        let s = compute_scale(&[0.5, -6.0, 1.0, 2.0], &INT4);
        assert!((s - 0.857142857).abs() < 1e-9);
        assert_eq!(s, 6.0 / 7.0);
        assert_eq!(compute_scale(&[0.0; 4], &INT4), 1.0);
        assert_eq!(compute_scale(&[-6.0, 6.0], &NumberFormat::FP4_E2M1), 1.0);
    }

    #[test]
    fn quantize_examples() {
        let q = quantize_vector(&[0.0; 4], INT4, Some(NumberFormat::FP8_E4M3));
        assert!(q.codes.iter().all(|&c| c == 0));
        assert_eq!(q.scale, 1.0);
        assert_eq!(dequantize_vector(&q), vec![0.0; 4]);

        let q = quantize_vector(&[0.5, -6.0, 1.0, 2.0], INT4, None);
        let ints: Vec<f64> = q.codes.iter().map(|&c| INT4.decode(c)).collect();
        assert_eq!(ints, vec![1.0, -7.0, 1.0, 2.0]);
        let back = dequantize_vector(&q);
        let want = [6.0 / 7.0, -6.0, 6.0 / 7.0, 12.0 / 7.0];
        for (a, b) in back.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn on_grid_vector_is_exact() {
        let v = [3.0, -1.5, 0.5, 6.0, 0.0, -4.0, 2.0, 1.0];
        let q = quantize_vector(&v, NumberFormat::FP4_E2M1, Some(NumberFormat::FP8_E4M3));
        assert_eq!(q.scale, 1.0);
        assert_eq!(dequantize_vector(&q), v.to_vec());
    }

    #[test]
    fn quantized_scale_is_rounded_up() {
        let v = [0.5, -6.0, 1.0, 2.0];
        let q = quantize_vector(&v, INT4, Some(NumberFormat::FP8_E4M3));
        assert!(q.scale >= 6.0 / 7.0);
        assert_eq!(q.scale, 0.875);
        assert_eq!(q.scale_code, Some(NumberFormat::FP8_E4M3.round_nearest(0.875)));
        for &c in &q.codes {
            assert!(INT4.decode(c).abs() <= 7.0);
        }
    }

    #[test]
    fn tensor_shape_contract() {
        let w = DenseMatrix::from_fn(2, 8, |i, j| (i * 8 + j) as f64);
        let q = quantize_tensor(&w, 8, INT4, None).unwrap();
        assert_eq!(q.vectors().len(), 2);
        assert_eq!(q.dequantize().shape(), (2, 8));
        assert!(matches!(
            quantize_tensor(&w, 3, INT4, None),
            Err(SdqError::DimensionMismatch(_))
        ));
        assert!(quantize_tensor(&w, 0, INT4, None).is_err());
    }

    #[test]
    fn on_grid_row_round_trips() {
        let vals = [1.0, -2.0, 3.0, -4.0, 5.0, -6.0, 7.0, 0.0];
        let w = DenseMatrix::from_fn(1, 16, |_, j| vals[j % 8]);
        assert_eq!(fake_quantize(&w, 16, INT4, None).unwrap(), w);
    }

    #[test]
    fn activation_vectors_run_down_columns() {
        // Column 0 holds a large value; column 1 must keep its own fine scale.
        let x = DenseMatrix::from_rows(&[vec![100.0, 0.7], vec![1.0, 0.1]]).unwrap();
        let q = fake_quantize_activations(&x, 2, INT4, None).unwrap();
        assert_eq!(q.get(0, 1), 0.7);
        assert!((q.get(1, 1) - 0.1).abs() < 0.7 / 14.0 + 1e-12);
        assert_eq!(q.get(1, 0), 0.0);
    }
}
