//! End-to-end sparsify → decompose → quantize, evaluated with fake-quantized
//! decomposed SpMM against the unmodified dense product.

use std::fmt;
use std::str::FromStr;

use crate::codec::{fake_quantize, fake_quantize_activations, quantize_tensor, NumberFormat, QuantizedTensor};
use crate::costmodel::{bits_per_weight, decomposed_cost, CostReport, IndexEncoding, StorageSpec};
use crate::decompose::{
    extract_outliers, DecompositionSpec, OutlierMetric, OutlierMetricKind, OutlierOrder,
};
use crate::error::{Result, SdqError};
use crate::sparsify::{PruneMethod, SignificanceMetric, DEFAULT_DAMPING};
use crate::tensor::{compress_nm, matmul_ref, spmm_ref, DenseMatrix, SparsityPattern, StructuredSparseMatrix};

pub const DEFAULT_QVS: usize = 16;
/// Storage width charged for scales kept at full precision.
pub const UNQUANTIZED_SCALE_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdqConfig {
    pub method: PruneMethod,
    pub sparsity: SparsityPattern,
    /// Outliers kept per block; zero disables the outlier branch.
    pub outlier_count: usize,
    pub outlier_format: NumberFormat,
    pub inlier_format: NumberFormat,
    pub scale_format: Option<NumberFormat>,
    pub qvs: usize,
    pub metric: OutlierMetricKind,
    pub order: OutlierOrder,
    pub outlier_activation: NumberFormat,
    pub inlier_activation: NumberFormat,
}

impl SdqConfig {
    pub fn m(&self) -> usize {
        self.sparsity.m()
    }

    pub fn inlier_count(&self) -> usize {
        self.sparsity.n() - self.outlier_count
    }

    pub fn outlier_pattern(&self) -> Option<SparsityPattern> {
        (self.outlier_count > 0).then(|| {
            SparsityPattern::new(self.outlier_count, self.m()).expect("checked on construction")
        })
    }

    pub fn inlier_pattern(&self) -> SparsityPattern {
        SparsityPattern::new(self.inlier_count(), self.m()).expect("checked on construction")
    }

    /// Naming string, e.g. `SDQ-W7:8-1:8int8-6:8fp4`.
    pub fn name(&self) -> String {
        let letter = match self.method {
            PruneMethod::Wanda => "W",
            PruneMethod::SparseGpt { .. } => "S",
            PruneMethod::Magnitude => "M",
        };
        format!(
            "SDQ-{letter}{}-{}:{}{}-{}{}",
            self.sparsity,
            self.outlier_count,
            self.m(),
            self.outlier_format,
            self.inlier_pattern(),
            self.inlier_format
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.outlier_count >= self.sparsity.n() {
            return Err(SdqError::Inconsistent(format!(
                "{} outliers per block leave no inliers under {}",
                self.outlier_count, self.sparsity
            )));
        }
        if self.qvs == 0 {
            return Err(SdqError::Inconsistent("q-vector size must be positive".into()));
        }
        Ok(())
    }

    /// `key = value` lines describing every resolved field.
    pub fn describe(&self) -> Vec<(String, String)> {
        let fmt_opt = |f: Option<NumberFormat>| f.map_or_else(|| "none".to_string(), |f| f.name());
        let mut lines = vec![
            ("config".to_string(), self.name()),
            ("sparsify.method".into(), self.method.name().into()),
            ("sparsify.pattern".into(), self.sparsity.to_string()),
        ];
        if let PruneMethod::SparseGpt { damping } = self.method {
            lines.push(("sparsify.damping".into(), format!("{damping:?}")));
        }
        lines.extend([
            ("decompose.outliers".into(), format!("{}:{}", self.outlier_count, self.m())),
            ("decompose.inliers".into(), self.inlier_pattern().to_string()),
            ("decompose.metric".into(), self.metric.name().into()),
            ("decompose.order".into(), self.order.name().into()),
            ("quant.outlier_format".into(), self.outlier_format.name()),
            ("quant.inlier_format".into(), self.inlier_format.name()),
            ("quant.scale_format".into(), fmt_opt(self.scale_format)),
            ("quant.qvs".into(), self.qvs.to_string()),
            ("quant.outlier_activation".into(), self.outlier_activation.name()),
            ("quant.inlier_activation".into(), self.inlier_activation.name()),
        ]);
        lines
    }
}

impl fmt::Display for SdqConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for SdqConfig {
    type Err = SdqError;

    fn from_str(s: &str) -> Result<Self> {
        parse_config(s)
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> SdqError {
        SdqError::Parse {
            position: self.pos,
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn expect(&mut self, lit: &str) -> Result<()> {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.err(format!("expected {lit:?}")))
        }
    }

    fn number(&mut self) -> Result<usize> {
        let len = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if len == 0 {
            return Err(self.err("expected a number"));
        }
        let v = self.rest()[..len]
            .parse()
            .map_err(|_| self.err("number out of range"))?;
        self.pos += len;
        Ok(v)
    }

    fn ratio(&mut self) -> Result<(usize, usize)> {
        let n = self.number()?;
        self.expect(":")?;
        Ok((n, self.number()?))
    }

    /// Format name running up to the next `-<digit>` or end of input.
    fn format(&mut self, stop_at_segment: bool) -> Result<NumberFormat> {
        let rest = self.rest();
        let bytes = rest.as_bytes();
        let end = if stop_at_segment {
            (0..bytes.len())
                .find(|&i| bytes[i] == b'-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit))
                .unwrap_or(bytes.len())
        } else {
            bytes.len()
        };
        let name = &rest[..end];
        let f = name
            .parse()
            .map_err(|_| self.err(format!("unknown number format {name:?}")))?;
        self.pos += end;
        Ok(f)
    }
}

/// Parses `SDQ-{W|S|M}{N}:{M}-{N_o}:{M}{fmt}-{N_i}:{M}{fmt}` and fills in the
/// defaults (product metric, large order, fp8-e4m3 scales, Q-Vectors of 16,
/// activations at each branch's weight format).
pub fn parse_config(name: &str) -> Result<SdqConfig> {
    let mut c = Cursor { text: name, pos: 0 };
    c.expect("SDQ-")?;
    let method = match c.rest().chars().next() {
        Some('W') => PruneMethod::Wanda,
        Some('S') => PruneMethod::SparseGpt {
            damping: DEFAULT_DAMPING,
        },
        Some('M') => PruneMethod::Magnitude,
        _ => return Err(c.err("expected sparsification method W, S or M")),
    };
    c.pos += 1;
    let (n, m) = c.ratio()?;
    c.expect("-")?;
    let outlier_at = c.pos;
    let (n_o, m_o) = c.ratio()?;
    let outlier_format = c.format(true)?;
    c.expect("-")?;
    let inlier_at = c.pos;
    let (n_i, m_i) = c.ratio()?;
    let inlier_format = c.format(false)?;

    let sparsity = SparsityPattern::new(n, m).map_err(|e| SdqError::Parse {
        position: 5,
        message: e.to_string(),
    })?;
    if m_o != m || m_i != m {
        return Err(SdqError::Inconsistent(format!(
            "block sizes differ: sparsify {m}, outliers {m_o} (at {outlier_at}), inliers {m_i} (at {inlier_at})"
        )));
    }
    if n_i == 0 {
        return Err(SdqError::Inconsistent("inlier count must be positive".into()));
    }
    if n_o + n_i != n {
        return Err(SdqError::Inconsistent(format!(
            "outliers {n_o} + inliers {n_i} != kept {n}"
        )));
    }
    let cfg = SdqConfig {
        method,
        sparsity,
        outlier_count: n_o,
        outlier_format,
        inlier_format,
        scale_format: Some(NumberFormat::FP8_E4M3),
        qvs: DEFAULT_QVS,
        metric: OutlierMetricKind::Product,
        order: OutlierOrder::Large,
        outlier_activation: outlier_format,
        inlier_activation: inlier_format,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// `‖o − o_ref‖_F / ‖o_ref‖_F`; zero when both vanish.
pub fn relative_error(o: &DenseMatrix, o_ref: &DenseMatrix) -> Result<f64> {
    let diff = o.sub(o_ref)?.frobenius_norm();
    let base = o_ref.frobenius_norm();
    Ok(if diff == 0.0 {
        0.0
    } else if base == 0.0 {
        f64::INFINITY
    } else {
        diff / base
    })
}

/// One quantized SpMM operand.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBranch {
    pub pattern: SparsityPattern,
    /// Packed (ELLPACK-slotted) values, quantized per Q-Vector.
    pub quantized: QuantizedTensor,
    /// Structured sparse matrix holding the dequantized values.
    pub dequantized: StructuredSparseMatrix,
}

impl QuantizedBranch {
    fn build(
        w: &DenseMatrix,
        pattern: SparsityPattern,
        format: NumberFormat,
        scale_format: Option<NumberFormat>,
        qvs: usize,
    ) -> Result<Self> {
        let compressed = compress_nm(w, pattern)?;
        let quantized = quantize_tensor(&compressed.padded_values(), qvs, format, scale_format)?
            .with_sparsity(pattern);
        let dequantized = compressed.with_padded_values(&quantized.dequantize())?;
        Ok(Self {
            pattern,
            quantized,
            dequantized,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageErrors {
    /// Output error of the pruned weights with exact activations.
    pub sparsify: f64,
    /// Output error of the quantized reconstruction with exact activations.
    pub weight_quant: f64,
    /// Relative Frobenius error of the reconstructed weights.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdqResult {
    pub pruned: DenseMatrix,
    pub outliers: Option<QuantizedBranch>,
    pub inliers: QuantizedBranch,
    pub w_hat: DenseMatrix,
    pub output: DenseMatrix,
    pub output_error: f64,
    pub stages: StageErrors,
    pub cost: CostReport,
}

fn storage(pattern: SparsityPattern, format: NumberFormat, cfg: &SdqConfig) -> StorageSpec {
    StorageSpec {
        pattern,
        data_bits: format.total_bits(),
        scale_bits: cfg.scale_format.map_or(UNQUANTIZED_SCALE_BITS, |f| f.total_bits()),
        qvs: cfg.qvs,
        index: IndexEncoding::Ellpack,
    }
}

/// Cost of a configuration; each branch computes at the wider of its weight
/// and activation formats.
pub fn sdq_cost(cfg: &SdqConfig) -> Result<CostReport> {
    let mut branches = Vec::new();
    if let Some(p) = cfg.outlier_pattern() {
        let bits = cfg.outlier_format.total_bits().max(cfg.outlier_activation.total_bits());
        branches.push((storage(p, cfg.outlier_format, cfg), bits));
    }
    let bits = cfg.inlier_format.total_bits().max(cfg.inlier_activation.total_bits());
    branches.push((storage(cfg.inlier_pattern(), cfg.inlier_format, cfg), bits));
    decomposed_cost(&branches)
}

/// Runs all three stages and the decomposed fake-quantized product.
///
/// `w` is `out_features × in_features`, `x_calib` is `samples × in_features`
/// (needed by wanda, sparsegpt and the product metric), and `x_eval` is
/// `in_features × batch`.
pub fn run_sdq(
    w: &DenseMatrix,
    x_calib: Option<&DenseMatrix>,
    x_eval: &DenseMatrix,
    cfg: &SdqConfig,
) -> Result<SdqResult> {
    cfg.validate()?;
    if x_eval.rows() != w.cols() {
        return Err(SdqError::DimensionMismatch(format!(
            "weights have {} inputs, evaluation activations have {} rows",
            w.cols(),
            x_eval.rows()
        )));
    }
    let o_ref = matmul_ref(w, x_eval)?;

    let pruned = SignificanceMetric::bind(cfg.method, x_calib)?.prune(w, cfg.sparsity)?;

    let (w_o, w_i) = match cfg.outlier_pattern() {
        None => (None, pruned.clone()),
        Some(outliers) => {
            let metric = match cfg.metric {
                OutlierMetricKind::Magnitude => OutlierMetric::Magnitude,
                OutlierMetricKind::Product => OutlierMetric::Product {
                    calibration: x_calib.ok_or_else(|| {
                        SdqError::InvalidArgument("product metric needs calibration activations".into())
                    })?,
                },
                OutlierMetricKind::OutputError => OutlierMetric::OutputError {
                    inlier_format: cfg.inlier_format,
                    scale_format: cfg.scale_format,
                    qvs: cfg.qvs,
                },
            };
            let spec = DecompositionSpec {
                outliers,
                metric,
                order: cfg.order,
            };
            let d = extract_outliers(&pruned, cfg.sparsity, &spec)?;
            (Some(d.outliers), d.inliers)
        }
    };

    let outliers = match (&w_o, cfg.outlier_pattern()) {
        (Some(w_o), Some(p)) => Some(QuantizedBranch::build(
            w_o,
            p,
            cfg.outlier_format,
            cfg.scale_format,
            cfg.qvs,
        )?),
        _ => None,
    };
    let inliers = QuantizedBranch::build(
        &w_i,
        cfg.inlier_pattern(),
        cfg.inlier_format,
        cfg.scale_format,
        cfg.qvs,
    )?;

    let inlier_dense = crate::tensor::decompress_nm(&inliers.dequantized);
    let w_hat = match &outliers {
        Some(o) => crate::tensor::decompress_nm(&o.dequantized).add(&inlier_dense)?,
        None => inlier_dense,
    };

    let a_i = fake_quantize_activations(x_eval, cfg.qvs, cfg.inlier_activation, cfg.scale_format)?;
    let mut output = spmm_ref(&inliers.dequantized, &a_i)?;
    if let Some(o) = &outliers {
        let a_o = fake_quantize_activations(x_eval, cfg.qvs, cfg.outlier_activation, cfg.scale_format)?;
        output = spmm_ref(&o.dequantized, &a_o)?.add(&output)?;
    }

    let stages = StageErrors {
        sparsify: relative_error(&matmul_ref(&pruned, x_eval)?, &o_ref)?,
        weight_quant: relative_error(&matmul_ref(&w_hat, x_eval)?, &o_ref)?,
        weight: relative_error(&w_hat, w)?,
    };
    Ok(SdqResult {
        output_error: relative_error(&output, &o_ref)?,
        pruned,
        outliers,
        inliers,
        w_hat,
        output,
        stages,
        cost: sdq_cost(cfg)?,
    })
}

/// Dense dual quantization of weights and activations in one format.
pub fn baseline_quant(
    w: &DenseMatrix,
    x_eval: &DenseMatrix,
    format: NumberFormat,
    scale_format: Option<NumberFormat>,
    qvs: usize,
) -> Result<f64> {
    let o_ref = matmul_ref(w, x_eval)?;
    let wq = fake_quantize(w, qvs, format, scale_format)?;
    let xq = fake_quantize_activations(x_eval, qvs, format, scale_format)?;
    relative_error(&matmul_ref(&wq, &xq)?, &o_ref)
}

/// Cost of [`baseline_quant`].
pub fn baseline_quant_cost(
    format: NumberFormat,
    scale_format: Option<NumberFormat>,
    qvs: usize,
    m: usize,
) -> Result<CostReport> {
    bits_per_weight(StorageSpec {
        pattern: SparsityPattern::dense(m)?,
        data_bits: format.total_bits(),
        scale_bits: scale_format.map_or(UNQUANTIZED_SCALE_BITS, |f| f.total_bits()),
        qvs,
        index: IndexEncoding::None,
    })
}

/// Pruning alone, with 16-bit values modeled as exact reals.
pub fn baseline_sparse(
    w: &DenseMatrix,
    x_calib: Option<&DenseMatrix>,
    x_eval: &DenseMatrix,
    method: PruneMethod,
    pattern: SparsityPattern,
) -> Result<f64> {
    let o_ref = matmul_ref(w, x_eval)?;
    let pruned = SignificanceMetric::bind(method, x_calib)?.prune(w, pattern)?;
    relative_error(&matmul_ref(&pruned, x_eval)?, &o_ref)
}

/// Cost of [`baseline_sparse`]: 16-bit values, ELLPACK indices, no scales.
pub fn baseline_sparse_cost(pattern: SparsityPattern) -> Result<CostReport> {
    bits_per_weight(StorageSpec {
        pattern,
        data_bits: 16,
        scale_bits: 0,
        qvs: 1,
        index: IndexEncoding::Ellpack,
    })
}
