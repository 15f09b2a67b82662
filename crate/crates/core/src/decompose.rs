//! Stage 2: split an N:M sparse weight tensor into an `N_o:M` outlier tensor
//! and an `(N − N_o):M` inlier tensor, plus coverage analysis of local
//! (per S-Vector) outlier extraction.

use std::fmt;
use std::str::FromStr;

use crate::codec::{fake_quantize, NumberFormat};
use crate::error::{Result, SdqError};
use crate::sparsify::{score_magnitude, score_wanda, top_k_in_block};
use crate::tensor::{validate_nm, DenseMatrix, SparsityPattern};

/// Metric name as it appears in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierMetricKind {
    Magnitude,
    Product,
    OutputError,
}

impl OutlierMetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Magnitude => "magnitude",
            Self::Product => "product",
            Self::OutputError => "output-error",
        }
    }
}

impl fmt::Display for OutlierMetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OutlierMetricKind {
    type Err = SdqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(Self::Magnitude),
            "product" => Ok(Self::Product),
            "output-error" => Ok(Self::OutputError),
            _ => Err(SdqError::InvalidArgument(format!(
                "unknown outlier metric {s:?} (expected magnitude, product, output-error)"
            ))),
        }
    }
}

/// Which end of the metric ranking becomes the outliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierOrder {
    Large,
    Small,
}

impl OutlierOrder {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Large => "large",
            Self::Small => "small",
        }
    }
}

impl fmt::Display for OutlierOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OutlierOrder {
    type Err = SdqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "large" => Ok(Self::Large),
            "small" => Ok(Self::Small),
            _ => Err(SdqError::InvalidArgument(format!(
                "unknown order {s:?} (expected large, small)"
            ))),
        }
    }
}

/// Outlier metric together with the inputs it needs.
#[derive(Debug, Clone, Copy)]
pub enum OutlierMetric<'a> {
    Magnitude,
    /// Weight-activation product; calibration is `samples × in_features`.
    Product { calibration: &'a DenseMatrix },
    /// Error each element would incur if fake-quantized as an inlier.
    OutputError {
        inlier_format: NumberFormat,
        scale_format: Option<NumberFormat>,
        qvs: usize,
    },
}

impl OutlierMetric<'_> {
    pub fn kind(&self) -> OutlierMetricKind {
        match self {
            Self::Magnitude => OutlierMetricKind::Magnitude,
            Self::Product { .. } => OutlierMetricKind::Product,
            Self::OutputError { .. } => OutlierMetricKind::OutputError,
        }
    }

    fn scores(&self, ws: &DenseMatrix) -> Result<DenseMatrix> {
        match *self {
            Self::Magnitude => Ok(score_magnitude(ws)),
            Self::Product { calibration } => score_wanda(ws, calibration),
            Self::OutputError {
                inlier_format,
                scale_format,
                qvs,
            } => score_output_error(ws, inlier_format, scale_format, qvs),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecompositionSpec<'a> {
    pub outliers: SparsityPattern,
    pub metric: OutlierMetric<'a>,
    pub order: OutlierOrder,
}

/// Result of [`extract_outliers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub outliers: DenseMatrix,
    pub inliers: DenseMatrix,
    pub outlier_pattern: SparsityPattern,
    pub inlier_pattern: SparsityPattern,
}

/// Moves the top `N_o` nonzeros of every block (by metric, in the requested
/// order, ties to the lower offset) into the outlier tensor; the remaining
/// nonzeros form the inlier tensor. The split is exact: `w_o + w_i = ws`.
pub fn extract_outliers(
    ws: &DenseMatrix,
    sparsity: SparsityPattern,
    spec: &DecompositionSpec<'_>,
) -> Result<Decomposition> {
    let m = sparsity.m();
    let n_o = spec.outliers.n();
    if spec.outliers.m() != m {
        return Err(SdqError::Inconsistent(format!(
            "outlier pattern {} and sparsity pattern {sparsity} use different block sizes",
            spec.outliers
        )));
    }
    if n_o >= sparsity.n() {
        return Err(SdqError::Inconsistent(format!(
            "outlier count {n_o} leaves no inliers under {sparsity}"
        )));
    }
    let check = validate_nm(ws, sparsity)?;
    if let Some((row, block)) = check.first_violation {
        return Err(SdqError::PatternViolation {
            row,
            block,
            nonzeros: ws.row(row)[block * m..(block + 1) * m]
                .iter()
                .filter(|v| **v != 0.0)
                .count(),
            n: sparsity.n(),
        });
    }
    let scores = spec.metric.scores(ws)?;

    let mut w_o = vec![0.0; ws.rows() * ws.cols()];
    let mut w_i = ws.data().to_vec();
    for (k, (wb, sb)) in ws
        .data()
        .chunks_exact(m)
        .zip(scores.data().chunks_exact(m))
        .enumerate()
    {
        let nonzero: Vec<usize> = (0..m).filter(|&j| wb[j] != 0.0).collect();
        let ranked: Vec<f64> = nonzero
            .iter()
            .map(|&j| match spec.order {
                OutlierOrder::Large => sb[j],
                OutlierOrder::Small => -sb[j],
            })
            .collect();
        for pick in top_k_in_block(&ranked, n_o) {
            let j = k * m + nonzero[pick];
            w_o[j] = w_i[j];
            w_i[j] = 0.0;
        }
    }
    Ok(Decomposition {
        outliers: DenseMatrix::new(ws.rows(), ws.cols(), w_o)?,
        inliers: DenseMatrix::new(ws.rows(), ws.cols(), w_i)?,
        outlier_pattern: spec.outliers,
        inlier_pattern: SparsityPattern::new(sparsity.n() - n_o, m)?,
    })
}

/// `|ws − fakequant(ws)|` elementwise: the error each element would take on
/// if it stayed in the inlier tensor.
pub fn score_output_error(
    ws: &DenseMatrix,
    inlier_format: NumberFormat,
    scale_format: Option<NumberFormat>,
    qvs: usize,
) -> Result<DenseMatrix> {
    let fq = fake_quantize(ws, qvs, inlier_format, scale_format)?;
    Ok(ws.sub(&fq)?.map(f64::abs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageMode {
    Global,
    SemiLocal { qvs: usize },
}

impl CoverageMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Global => "global",
            Self::SemiLocal { .. } => "semilocal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub outlier_ratio: f64,
    pub extraction: SparsityPattern,
    pub mode: CoverageMode,
    pub designated: usize,
    pub covered: usize,
    /// `covered / designated`, or 1 when nothing was designated.
    pub covered_fraction: f64,
}

/// Number of elements designated as outliers out of `population`.
///
/// Truncates `ratio · population`, so a 64-wide Q-Vector holds one
/// semi-local outlier for any ratio below 2/64.
pub fn designated_count(ratio: f64, population: usize) -> usize {
    let exact = ratio * population as f64;
    // Absorb representation error such as 0.03 · 100 = 2.9999999999999996.
    ((exact + 1e-9).floor() as usize).min(population)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SdqError::InvalidArgument(format!(
            "outlier ratio must lie in (0, 1), got {ratio}"
        )));
    }
    Ok(())
}

/// Per element, whether it is among the top-`N_o` magnitudes of its own
/// S-Vector (ties to the lower offset).
fn local_capture_mask(w: &DenseMatrix, extraction: SparsityPattern) -> Vec<bool> {
    let m = extraction.m();
    let mut mask = vec![false; w.rows() * w.cols()];
    for (k, block) in w.data().chunks_exact(m).enumerate() {
        let mags: Vec<f64> = block.iter().map(|v| v.abs()).collect();
        for j in top_k_in_block(&mags, extraction.n()) {
            mask[k * m + j] = true;
        }
    }
    mask
}

/// Flat indices of the `count` largest magnitudes in `values`, ties to the
/// lower index.
fn top_magnitudes(values: &[f64], count: usize) -> Vec<usize> {
    let mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    top_k_in_block(&mags, count)
}

fn report(
    ratio: f64,
    extraction: SparsityPattern,
    mode: CoverageMode,
    designated: usize,
    covered: usize,
) -> CoverageReport {
    let covered_fraction = if designated == 0 {
        1.0
    } else {
        covered as f64 / designated as f64
    };
    CoverageReport {
        outlier_ratio: ratio,
        extraction,
        mode,
        designated,
        covered,
        covered_fraction,
    }
}

/// Coverage of tensor-wide top-magnitude outliers by local N_o:M extraction.
pub fn coverage_global(
    w: &DenseMatrix,
    ratio: f64,
    extraction: SparsityPattern,
) -> Result<CoverageReport> {
    check_ratio(ratio)?;
    if !w.cols().is_multiple_of(extraction.m()) {
        return Err(SdqError::DimensionMismatch(format!(
            "{} columns are not divisible by block size {}",
            w.cols(),
            extraction.m()
        )));
    }
    let mask = local_capture_mask(w, extraction);
    let designated = top_magnitudes(w.data(), designated_count(ratio, w.data().len()));
    let covered = designated.iter().filter(|&&i| mask[i]).count();
    Ok(report(
        ratio,
        extraction,
        CoverageMode::Global,
        designated.len(),
        covered,
    ))
}

/// Coverage of per-Q-Vector top-magnitude outliers by local N_o:M extraction.
pub fn coverage_semilocal(
    w: &DenseMatrix,
    ratio: f64,
    extraction: SparsityPattern,
    qvs: usize,
) -> Result<CoverageReport> {
    check_ratio(ratio)?;
    if qvs == 0 || !qvs.is_multiple_of(extraction.m()) {
        return Err(SdqError::InvalidArgument(format!(
            "q-vector size {qvs} is not a multiple of block size {}",
            extraction.m()
        )));
    }
    if !w.cols().is_multiple_of(qvs) {
        return Err(SdqError::DimensionMismatch(format!(
            "{} columns are not divisible by q-vector size {qvs}",
            w.cols()
        )));
    }
    let mask = local_capture_mask(w, extraction);
    let per_vector = designated_count(ratio, qvs);
    let (mut designated, mut covered) = (0, 0);
    for (v, chunk) in w.data().chunks_exact(qvs).enumerate() {
        for j in top_magnitudes(chunk, per_vector) {
            designated += 1;
            covered += usize::from(mask[v * qvs + j]);
        }
    }
    Ok(report(
        ratio,
        extraction,
        CoverageMode::SemiLocal { qvs },
        designated,
        covered,
    ))
}
