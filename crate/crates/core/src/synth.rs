//! Seeded synthetic matrices.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::DenseMatrix;

pub const DEFAULT_OUTLIER_SCALE: f64 = 10.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal entries.
pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect();
    DenseMatrix::new(rows, cols, data).expect("normal samples are finite")
}

/// Gaussian entries with `⌈ratio · numel⌉` positions (drawn uniformly without
/// replacement) overwritten by `±|N(0,1)|·outlier_scale`.
pub fn heavy_tail(
    rows: usize,
    cols: usize,
    ratio: f64,
    outlier_scale: f64,
    rng: &mut impl Rng,
) -> DenseMatrix {
    let base = gaussian(rows, cols, rng);
    let numel = rows * cols;
    let count = ((ratio * numel as f64).ceil() as usize).min(numel);
    let mut data = base.into_data();
    for pos in index::sample(rng, numel, count).into_vec() {
        let mag: f64 = StandardNormal.sample(&mut *rng);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        data[pos] = sign * mag.abs() * outlier_scale;
    }
    DenseMatrix::new(rows, cols, data).expect("finite")
}

/// Inputs for one layer: heavy-tailed weights (`out × in`), calibration
/// activations (`samples × in`) and evaluation activations (`in × batch`).
#[derive(Debug, Clone)]
pub struct LayerData {
    pub weights: DenseMatrix,
    pub calibration: DenseMatrix,
    pub eval: DenseMatrix,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerShape {
    pub out_features: usize,
    pub in_features: usize,
    pub calib_samples: usize,
    pub batch: usize,
    pub outlier_ratio: f64,
    pub outlier_scale: f64,
}

impl Default for LayerShape {
    fn default() -> Self {
        Self {
            out_features: 256,
            in_features: 256,
            calib_samples: 128,
            batch: 64,
            outlier_ratio: 0.01,
            outlier_scale: DEFAULT_OUTLIER_SCALE,
        }
    }
}

pub fn layer(shape: LayerShape, seed: u64) -> LayerData {
    let mut r = rng(seed);
    let weights = heavy_tail(
        shape.out_features,
        shape.in_features,
        shape.outlier_ratio,
        shape.outlier_scale,
        &mut r,
    );
    let calibration = gaussian(shape.calib_samples, shape.in_features, &mut r);
    let eval = gaussian(shape.in_features, shape.batch, &mut r);
    LayerData {
        weights,
        calibration,
        eval,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = gaussian(4, 5, &mut rng(3));
        let b = gaussian(4, 5, &mut rng(3));
        assert_eq!(a, b);
        assert_ne!(a, gaussian(4, 5, &mut rng(4)));
    }

    #[test]
    fn heavy_tail_plants_outliers() {
        let w = heavy_tail(64, 64, 0.01, 10.0, &mut rng(1));
        let g = gaussian(64, 64, &mut rng(1));
        let changed = w.data().iter().zip(g.data()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 41);
        let big = w.data().iter().filter(|v| v.abs() > 6.0).count();
        assert!(big >= 10, "only {big} large values");
    }
}
