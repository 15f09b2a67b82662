//! Stage 1: N:M pruning under a significance metric.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Result, SdqError};
use crate::linalg;
use crate::tensor::{DenseMatrix, SparsityPattern};

/// Default relative Hessian damping for OBS pruning.
pub const DEFAULT_DAMPING: f64 = 0.01;

/// How pruning decides which weights survive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneMethod {
    Magnitude,
    /// `|w|` times the L2 norm of the matching activation feature.
    Wanda,
    /// Sequential OBS with compensating updates.
    SparseGpt { damping: f64 },
}

impl PruneMethod {
    pub fn needs_calibration(&self) -> bool {
        !matches!(self, Self::Magnitude)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Magnitude => "magnitude",
            Self::Wanda => "wanda",
            Self::SparseGpt { .. } => "sparsegpt",
        }
    }
}

impl fmt::Display for PruneMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PruneMethod {
    type Err = SdqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(Self::Magnitude),
            "wanda" => Ok(Self::Wanda),
            "sparsegpt" => Ok(Self::SparseGpt {
                damping: DEFAULT_DAMPING,
            }),
            _ => Err(SdqError::InvalidArgument(format!(
                "unknown pruning method {s:?} (expected magnitude, wanda, sparsegpt)"
            ))),
        }
    }
}

/// A pruning method bound to its calibration activations
/// (`samples × in_features`) when it needs them.
#[derive(Debug, Clone, Copy)]
pub enum SignificanceMetric<'a> {
    Magnitude,
    Wanda { calibration: &'a DenseMatrix },
    SparseGpt {
        calibration: &'a DenseMatrix,
        damping: f64,
    },
}

impl<'a> SignificanceMetric<'a> {
    pub fn bind(method: PruneMethod, calibration: Option<&'a DenseMatrix>) -> Result<Self> {
        let need = || {
            calibration.ok_or_else(|| {
                SdqError::InvalidArgument(format!("{method} pruning needs calibration activations"))
            })
        };
        Ok(match method {
            PruneMethod::Magnitude => Self::Magnitude,
            PruneMethod::Wanda => Self::Wanda {
                calibration: need()?,
            },
            PruneMethod::SparseGpt { damping } => Self::SparseGpt {
                calibration: need()?,
                damping,
            },
        })
    }

    pub fn prune(&self, w: &DenseMatrix, pattern: SparsityPattern) -> Result<DenseMatrix> {
        match *self {
            Self::Magnitude => prune_nm(w, &score_magnitude(w), pattern),
            Self::Wanda { calibration } => prune_nm(w, &score_wanda(w, calibration)?, pattern),
            Self::SparseGpt {
                calibration,
                damping,
            } => prune_sparsegpt(w, calibration, pattern, damping),
        }
    }
}

pub fn score_magnitude(w: &DenseMatrix) -> DenseMatrix {
    w.map(f64::abs)
}

/// L2 norm of every column of `x`.
pub fn feature_norms(x: &DenseMatrix) -> Vec<f64> {
    let mut sq = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (acc, v) in sq.iter_mut().zip(x.row(r)) {
            *acc += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// `score[i][j] = |w[i][j]| · ‖x_calib[:, j]‖₂`.
pub fn score_wanda(w: &DenseMatrix, x_calib: &DenseMatrix) -> Result<DenseMatrix> {
    if x_calib.cols() != w.cols() {
        return Err(SdqError::DimensionMismatch(format!(
            "calibration has {} features, weights have {}",
            x_calib.cols(),
            w.cols()
        )));
    }
    let norms = feature_norms(x_calib);
    Ok(DenseMatrix::from_fn(w.rows(), w.cols(), |i, j| {
        w.get(i, j).abs() * norms[j]
    }))
}

/// In-block offsets of the `keep` highest scores, ties to the lower offset.
pub(crate) fn top_k_in_block(scores: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(keep);
    order
}

/// Keeps the `n` highest-scoring positions of each `m`-block and zeroes the
/// rest. Surviving values are untouched.
pub fn prune_nm(
    w: &DenseMatrix,
    scores: &DenseMatrix,
    pattern: SparsityPattern,
) -> Result<DenseMatrix> {
    if w.shape() != scores.shape() {
        return Err(SdqError::DimensionMismatch(format!(
            "weights {}x{} vs scores {}x{}",
            w.rows(),
            w.cols(),
            scores.rows(),
            scores.cols()
        )));
    }
    let m = pattern.m();
    if !w.cols().is_multiple_of(m) {
        return Err(SdqError::DimensionMismatch(format!(
            "{} columns are not divisible by block size {m}",
            w.cols()
        )));
    }
    let mut out = vec![0.0; w.rows() * w.cols()];
    for (k, (wb, sb)) in w
        .data()
        .chunks_exact(m)
        .zip(scores.data().chunks_exact(m))
        .enumerate()
    {
        for j in top_k_in_block(sb, pattern.n()) {
            out[k * m + j] = wb[j];
        }
    }
    DenseMatrix::new(w.rows(), w.cols(), out)
}

/// OBS-style N:M pruning with weight compensation.
///
/// Uses `H = XᵀX + damping·mean(diag(XᵀX))·I` and the upper Cholesky factor
/// `U` of `H⁻¹`. Columns are visited left to right in groups of `m`. At the
/// start of each group the `n` keepers are the positions with the largest
/// `w² / U_jj²`; every visited column then pushes its pruning residual onto
/// the unvisited columns along row `j` of `U`.
pub fn prune_sparsegpt(
    w: &DenseMatrix,
    x_calib: &DenseMatrix,
    pattern: SparsityPattern,
    damping: f64,
) -> Result<DenseMatrix> {
    let k = w.cols();
    if x_calib.cols() != k {
        return Err(SdqError::DimensionMismatch(format!(
            "calibration has {} features, weights have {k}",
            x_calib.cols()
        )));
    }
    if !k.is_multiple_of(pattern.m()) {
        return Err(SdqError::DimensionMismatch(format!(
            "{k} columns are not divisible by block size {}",
            pattern.m()
        )));
    }
    if !(damping > 0.0 && damping.is_finite()) {
        return Err(SdqError::InvalidArgument(format!(
            "damping must be positive, got {damping}"
        )));
    }
    let u = inverse_hessian_factor(x_calib, damping)?;
    let m = pattern.m();

    let mut out = w.data().to_vec();
    out.par_chunks_mut(k.max(1)).for_each(|row| {
        for g in (0..k).step_by(m) {
            let saliency: Vec<f64> = (g..g + m)
                .map(|j| row[j] * row[j] / (u[j * k + j] * u[j * k + j]))
                .collect();
            let mut keep = [false; 16];
            for j in top_k_in_block(&saliency, pattern.n()) {
                keep[j] = true;
            }
            for i in g..g + m {
                let target = if keep[i - g] { row[i] } else { 0.0 };
                let err = (row[i] - target) / u[i * k + i];
                if err != 0.0 {
                    for j in i + 1..k {
                        row[j] -= err * u[i * k + j];
                    }
                }
                row[i] = target;
            }
        }
    });
    DenseMatrix::new(w.rows(), k, out)
}

/// Upper Cholesky factor (row-major) of the damped inverse Hessian.
fn inverse_hessian_factor(x: &DenseMatrix, damping: f64) -> Result<Vec<f64>> {
    let k = x.cols();
    let mut h = vec![0.0; k * k];
    for s in 0..x.rows() {
        let xs = x.row(s);
        for i in 0..k {
            if xs[i] == 0.0 {
                continue;
            }
            for j in 0..k {
                h[i * k + j] += xs[i] * xs[j];
            }
        }
    }
    let mean_diag = (0..k).map(|i| h[i * k + i]).sum::<f64>() / k.max(1) as f64;
    for i in 0..k {
        h[i * k + i] += damping * mean_diag;
    }
    let hinv = linalg::spd_inverse(&h, k)?;
    let lower = linalg::cholesky_lower(&hinv, k)?;
    // Uᵀ = L, so U[i][j] = L[j][i].
    let mut upper = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            upper[i * k + j] = lower[j * k + i];
        }
    }
    Ok(upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::validate_nm;

    fn row(v: &[f64]) -> DenseMatrix {
        DenseMatrix::new(1, v.len(), v.to_vec()).unwrap()
    }

    fn p(n: usize, m: usize) -> SparsityPattern {
        SparsityPattern::new(n, m).unwrap()
    }

    #[test]
    fn magnitude_scores() {
        let w = row(&[1.0, -4.0, 3.0, 2.0]);
        assert_eq!(score_magnitude(&w).data(), &[1.0, 4.0, 3.0, 2.0]);
        assert_eq!(score_magnitude(&w.scale(-1.0)), score_magnitude(&w));
        assert_eq!(score_magnitude(&DenseMatrix::zeros(2, 3)), DenseMatrix::zeros(2, 3));
    }

    #[test]
    fn wanda_scores() {
        let w = row(&[1.0, -4.0]);
        // Column norms 5 and 1.
        let x = DenseMatrix::from_rows(&[vec![3.0, 1.0], vec![4.0, 0.0]]).unwrap();
        assert_eq!(score_wanda(&w, &x).unwrap().data(), &[5.0, 4.0]);

        let ones = DenseMatrix::from_fn(9, 2, |_, _| 1.0);
        assert_eq!(score_wanda(&w, &ones).unwrap().data(), &[3.0, 12.0]);

        let dead = DenseMatrix::from_rows(&[vec![0.0, 2.0]]).unwrap();
        assert_eq!(score_wanda(&w, &dead).unwrap().get(0, 0), 0.0);

        assert!(score_wanda(&w, &DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn prune_examples() {
        let w = row(&[1.0, -4.0, 3.0, 2.0]);
        let out = prune_nm(&w, &score_magnitude(&w), p(2, 4)).unwrap();
        assert_eq!(out.data(), &[0.0, -4.0, 3.0, 0.0]);

        assert_eq!(prune_nm(&w, &score_magnitude(&w), p(4, 4)).unwrap(), w);

        let flat = DenseMatrix::from_fn(2, 8, |_, _| 1.0);
        let out = prune_nm(&flat, &flat, p(2, 4)).unwrap();
        for r in 0..2 {
            assert_eq!(out.row(r), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        }
        assert!(prune_nm(&w, &DenseMatrix::zeros(1, 8), p(2, 4)).is_err());
    }

    #[test]
    fn sparsegpt_with_diagonal_hessian_is_magnitude() {
        let w = DenseMatrix::from_fn(3, 8, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let x = DenseMatrix::identity(8).scale(2.0);
        let obs = prune_sparsegpt(&w, &x, p(2, 4), DEFAULT_DAMPING).unwrap();
        let mag = prune_nm(&w, &score_magnitude(&w), p(2, 4)).unwrap();
        assert_eq!(obs, mag);
    }

    #[test]
    fn sparsegpt_output_is_nm() {
        let w = DenseMatrix::from_fn(4, 16, |i, j| ((i * 13 + j * 7) % 17) as f64 - 8.0);
        let x = DenseMatrix::from_fn(20, 16, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let out = prune_sparsegpt(&w, &x, p(3, 8), DEFAULT_DAMPING).unwrap();
        assert!(validate_nm(&out, p(3, 8)).unwrap().valid);
    }

    #[test]
    fn sparsegpt_errors() {
        let w = DenseMatrix::zeros(2, 8);
        assert!(matches!(
            prune_sparsegpt(&w, &DenseMatrix::zeros(4, 8), p(2, 4), DEFAULT_DAMPING),
            Err(SdqError::SingularHessian { .. })
        ));
        assert!(prune_sparsegpt(&w, &DenseMatrix::zeros(4, 4), p(2, 4), 0.01).is_err());
        assert!(prune_sparsegpt(&w, &DenseMatrix::identity(8), p(2, 4), 0.0).is_err());
    }

    #[test]
    fn method_names() {
        for name in ["magnitude", "wanda", "sparsegpt"] {
            assert_eq!(name.parse::<PruneMethod>().unwrap().name(), name);
        }
        assert!("owl".parse::<PruneMethod>().is_err());
        assert!(SignificanceMetric::bind(PruneMethod::Wanda, None).is_err());
    }
}
