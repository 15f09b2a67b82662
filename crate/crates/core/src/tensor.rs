//! Dense and N:M structured sparse matrices.
//!
//! N:M blocks (S-Vectors) run along the column axis, which is the reduction
//! axis of a weight matrix laid out as `out_features × in_features`.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Result, SdqError};

/// Row-major matrix of finite `f64` values.
///
/// Negative zero is normalized to positive zero on construction so that
/// structured sparse round trips are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SdqError::DimensionMismatch(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        for (i, v) in data.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(SdqError::NonFinite {
                    row: i / cols.max(1),
                    col: i % cols.max(1),
                    value: *v,
                });
            }
            if *v == 0.0 {
                *v = 0.0;
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Builds a matrix from a generator.
    ///
    /// # Panics
    ///
    /// Panics if the generator yields a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data).expect("generator produced a non-finite value")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(SdqError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::new(self.rows, self.cols, data).expect("mapped value is not finite")
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(SdqError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.rows, self.cols, data)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn count_nonzeros(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    /// Positions of nonzero entries.
    pub fn support(&self) -> Vec<bool> {
        self.data.iter().map(|v| *v != 0.0).collect()
    }
}

impl fmt::Display for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            let cells: Vec<String> = self.row(r).iter().map(|v| format!("{v:?}")).collect();
            writeln!(f, "[{}]", cells.join(", "))?;
        }
        Ok(())
    }
}

/// An N:M pattern: at most `n` nonzeros in every aligned block of `m` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SparsityPattern {
    n: usize,
    m: usize,
}

impl SparsityPattern {
    pub const BLOCK_SIZES: [usize; 3] = [4, 8, 16];

    pub fn new(n: usize, m: usize) -> Result<Self> {
        if !Self::BLOCK_SIZES.contains(&m) {
            return Err(SdqError::InvalidPattern {
                n,
                m,
                reason: "block size must be one of 4, 8, 16".into(),
            });
        }
        if n == 0 || n > m {
            return Err(SdqError::InvalidPattern {
                n,
                m,
                reason: "kept count must satisfy 1 <= n <= m".into(),
            });
        }
        Ok(Self { n, m })
    }

    /// The no-op pattern `m:m`.
    pub fn dense(m: usize) -> Result<Self> {
        Self::new(m, m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_dense(&self) -> bool {
        self.n == self.m
    }

    /// Fraction of positions kept, `n / m`.
    pub fn density(&self) -> f64 {
        self.n as f64 / self.m as f64
    }

    /// Bits needed to address one position inside a block.
    pub fn index_bits(&self) -> u32 {
        self.m.trailing_zeros()
    }
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

impl std::str::FromStr for SparsityPattern {
    type Err = SdqError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SdqError::InvalidArgument(format!("expected N:M pattern, got {s:?}"));
        let (n, m) = s.split_once(':').ok_or_else(bad)?;
        let n = n.trim().parse().map_err(|_| bad())?;
        let m = m.trim().parse().map_err(|_| bad())?;
        Self::new(n, m)
    }
}

fn check_block_axis(cols: usize, m: usize) -> Result<()> {
    if !cols.is_multiple_of(m) {
        return Err(SdqError::DimensionMismatch(format!(
            "{cols} columns are not divisible by block size {m}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NmValidation {
    pub valid: bool,
    /// First offending `(row, block)` in row-major block order.
    pub first_violation: Option<(usize, usize)>,
}

/// Checks that every `m`-block of every row holds at most `n` nonzeros.
pub fn validate_nm(w: &DenseMatrix, pattern: SparsityPattern) -> Result<NmValidation> {
    check_block_axis(w.cols(), pattern.m())?;
    for r in 0..w.rows() {
        for (b, block) in w.row(r).chunks_exact(pattern.m()).enumerate() {
            if block.iter().filter(|v| **v != 0.0).count() > pattern.n() {
                return Ok(NmValidation {
                    valid: false,
                    first_violation: Some((r, b)),
                });
            }
        }
    }
    Ok(NmValidation {
        valid: true,
        first_violation: None,
    })
}

/// N:M matrix stored block-compressed: each block keeps its nonzero values
/// and their ascending in-block offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredSparseMatrix {
    rows: usize,
    cols: usize,
    pattern: SparsityPattern,
    values: Vec<f64>,
    indices: Vec<u8>,
    /// `block_ptr[k]..block_ptr[k + 1]` spans block `k` (row-major).
    block_ptr: Vec<usize>,
}

impl StructuredSparseMatrix {
    /// Assembles a matrix from per-block `(values, indices)` lists, checking
    /// every structural invariant.
    pub fn from_blocks(
        rows: usize,
        cols: usize,
        pattern: SparsityPattern,
        blocks: Vec<(Vec<f64>, Vec<u8>)>,
    ) -> Result<Self> {
        check_block_axis(cols, pattern.m())?;
        let bpr = cols / pattern.m();
        if blocks.len() != rows * bpr {
            return Err(SdqError::DimensionMismatch(format!(
                "expected {} blocks, got {}",
                rows * bpr,
                blocks.len()
            )));
        }
        let mut values = Vec::new();
        let mut indices = Vec::new();
        let mut block_ptr = Vec::with_capacity(blocks.len() + 1);
        block_ptr.push(0);
        for (k, (vals, idx)) in blocks.into_iter().enumerate() {
            let (row, block) = (k / bpr.max(1), k % bpr.max(1));
            if vals.len() != idx.len() {
                return Err(SdqError::InvalidArgument(format!(
                    "block ({row}, {block}) has {} values but {} indices",
                    vals.len(),
                    idx.len()
                )));
            }
            if vals.len() > pattern.n() {
                return Err(SdqError::PatternViolation {
                    row,
                    block,
                    nonzeros: vals.len(),
                    n: pattern.n(),
                });
            }
            if idx.windows(2).any(|w| w[0] >= w[1]) || idx.iter().any(|&i| i as usize >= pattern.m())
            {
                return Err(SdqError::InvalidArgument(format!(
                    "block ({row}, {block}) indices must be strictly ascending and below {}",
                    pattern.m()
                )));
            }
            if vals.iter().any(|v| *v == 0.0 || !v.is_finite()) {
                return Err(SdqError::InvalidArgument(format!(
                    "block ({row}, {block}) stores a zero or non-finite value"
                )));
            }
            values.extend(vals);
            indices.extend(idx);
            block_ptr.push(values.len());
        }
        Ok(Self {
            rows,
            cols,
            pattern,
            values,
            indices,
            block_ptr,
        })
    }

    pub fn zeros(rows: usize, cols: usize, pattern: SparsityPattern) -> Result<Self> {
        check_block_axis(cols, pattern.m())?;
        let nblocks = rows * cols / pattern.m();
        Ok(Self {
            rows,
            cols,
            pattern,
            values: Vec::new(),
            indices: Vec::new(),
            block_ptr: vec![0; nblocks + 1],
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pattern(&self) -> SparsityPattern {
        self.pattern
    }

    pub fn blocks_per_row(&self) -> usize {
        self.cols / self.pattern.m()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Values and offsets of block `block` in row `row`.
    pub fn block(&self, row: usize, block: usize) -> (&[f64], &[u8]) {
        let k = row * self.blocks_per_row() + block;
        let span = self.block_ptr[k]..self.block_ptr[k + 1];
        (&self.values[span.clone()], &self.indices[span])
    }

    /// ELLPACK view: every block padded to exactly `n` slots with zeros,
    /// giving a `rows × (blocks_per_row · n)` matrix of stored values.
    pub fn padded_values(&self) -> DenseMatrix {
        let n = self.pattern.n();
        let bpr = self.blocks_per_row();
        let mut data = vec![0.0; self.rows * bpr * n];
        for r in 0..self.rows {
            for b in 0..bpr {
                let (vals, _) = self.block(r, b);
                let base = (r * bpr + b) * n;
                data[base..base + vals.len()].copy_from_slice(vals);
            }
        }
        DenseMatrix::new(self.rows, bpr * n, data).expect("stored values are finite")
    }

    /// Replaces stored values with the leading slots of `padded` (same layout
    /// as [`padded_values`](Self::padded_values)). Entries that became zero
    /// are dropped from the skeleton.
    pub fn with_padded_values(&self, padded: &DenseMatrix) -> Result<Self> {
        let n = self.pattern.n();
        let bpr = self.blocks_per_row();
        if padded.shape() != (self.rows, bpr * n) {
            return Err(SdqError::DimensionMismatch(format!(
                "padded values must be {}x{}, got {}x{}",
                self.rows,
                bpr * n,
                padded.rows(),
                padded.cols()
            )));
        }
        let mut blocks = Vec::with_capacity(self.rows * bpr);
        for r in 0..self.rows {
            let row = padded.row(r);
            for b in 0..bpr {
                let (_, idx) = self.block(r, b);
                let slots = &row[b * n..b * n + idx.len()];
                let (v, i): (Vec<f64>, Vec<u8>) = slots
                    .iter()
                    .zip(idx)
                    .filter(|(v, _)| **v != 0.0)
                    .map(|(v, i)| (*v, *i))
                    .unzip();
                blocks.push((v, i));
            }
        }
        Self::from_blocks(self.rows, self.cols, self.pattern, blocks)
    }
}

/// Packs an N:M-valid matrix into block-compressed form. Lossless.
pub fn compress_nm(w: &DenseMatrix, pattern: SparsityPattern) -> Result<StructuredSparseMatrix> {
    check_block_axis(w.cols(), pattern.m())?;
    let m = pattern.m();
    let mut blocks = Vec::with_capacity(w.rows() * w.cols() / m);
    for r in 0..w.rows() {
        for (b, block) in w.row(r).chunks_exact(m).enumerate() {
            let (vals, idx): (Vec<f64>, Vec<u8>) = block
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (*v, i as u8))
                .unzip();
            if vals.len() > pattern.n() {
                return Err(SdqError::PatternViolation {
                    row: r,
                    block: b,
                    nonzeros: vals.len(),
                    n: pattern.n(),
                });
            }
            blocks.push((vals, idx));
        }
    }
    StructuredSparseMatrix::from_blocks(w.rows(), w.cols(), pattern, blocks)
}

pub fn decompress_nm(s: &StructuredSparseMatrix) -> DenseMatrix {
    let m = s.pattern().m();
    let mut data = vec![0.0; s.rows() * s.cols()];
    for r in 0..s.rows() {
        for b in 0..s.blocks_per_row() {
            let (vals, idx) = s.block(r, b);
            for (v, &i) in vals.iter().zip(idx) {
                data[r * s.cols() + b * m + i as usize] = *v;
            }
        }
    }
    DenseMatrix::new(s.rows(), s.cols(), data).expect("stored values are finite")
}

/// Reference GEMM: `O[i][j] = Σ_k a[i][k]·b[k][j]`, summed in ascending `k`.
///
/// Rows are computed in parallel; each row's accumulation order is fixed, so
/// the result does not depend on the thread count.
pub fn matmul_ref(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(SdqError::DimensionMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = b.cols();
    let mut out = vec![0.0; a.rows() * n];
    if n > 0 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, orow)| {
            for (j, o) in orow.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &av) in a.row(i).iter().enumerate() {
                    acc += av * b.get(k, j);
                }
                *o = acc;
            }
        });
    }
    DenseMatrix::new(a.rows(), n, out)
}

/// Sparse × dense product visiting only stored values, in ascending column
/// order. Agrees bit-for-bit with `matmul_ref(decompress_nm(s), b)`.
pub fn spmm_ref(s: &StructuredSparseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols() != b.rows() {
        return Err(SdqError::DimensionMismatch(format!(
            "cannot multiply {}x{} sparse by {}x{}",
            s.rows(),
            s.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = b.cols();
    let m = s.pattern().m();
    let mut out = vec![0.0; s.rows() * n];
    if n > 0 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, orow)| {
            for (j, o) in orow.iter_mut().enumerate() {
                let mut acc = 0.0;
                for blk in 0..s.blocks_per_row() {
                    let (vals, idx) = s.block(i, blk);
                    for (v, &off) in vals.iter().zip(idx) {
                        acc += v * b.get(blk * m + off as usize, j);
                    }
                }
                *o = acc;
            }
        });
    }
    DenseMatrix::new(s.rows(), n, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> DenseMatrix {
        DenseMatrix::new(1, v.len(), v.to_vec()).unwrap()
    }

    fn p(n: usize, m: usize) -> SparsityPattern {
        SparsityPattern::new(n, m).unwrap()
    }

    #[test]
    fn rejects_non_finite_and_bad_length() {
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(SdqError::NonFinite { col: 1, .. })
        ));
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn negative_zero_is_normalized() {
        let m = row(&[-0.0, 1.0]);
        assert_eq!(m.get(0, 0).to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn pattern_bounds() {
        assert!(SparsityPattern::new(0, 4).is_err());
        assert!(SparsityPattern::new(5, 4).is_err());
        assert!(SparsityPattern::new(2, 6).is_err());
        assert!(SparsityPattern::new(16, 16).unwrap().is_dense());
        assert_eq!("7:8".parse::<SparsityPattern>().unwrap(), p(7, 8));
        assert_eq!(p(1, 8).index_bits(), 3);
    }

    #[test]
    fn validate_examples() {
        let ok = validate_nm(&row(&[0.0, 3.0, 0.0, -1.5]), p(2, 4)).unwrap();
        assert!(ok.valid);
        let bad = validate_nm(&row(&[1.0, 1.0, 1.0, 0.0]), p(2, 4)).unwrap();
        assert_eq!(bad.first_violation, Some((0, 0)));
        assert!(!bad.valid);
        assert!(validate_nm(&DenseMatrix::zeros(4, 8), p(1, 8)).unwrap().valid);
        assert!(matches!(
            validate_nm(&DenseMatrix::zeros(1, 6), p(2, 4)),
            Err(SdqError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn compress_examples() {
        let s = compress_nm(&row(&[0.0, 3.0, 0.0, -1.5]), p(2, 4)).unwrap();
        assert_eq!(s.block(0, 0), (&[3.0, -1.5][..], &[1u8, 3][..]));

        let s = compress_nm(&DenseMatrix::zeros(1, 8), p(2, 4)).unwrap();
        assert_eq!(s.nnz(), 0);
        assert_eq!(s.block(0, 1).0.len(), 0);
        assert_eq!(decompress_nm(&s), DenseMatrix::zeros(1, 8));

        let s = compress_nm(&row(&[5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -2.0]), p(2, 8)).unwrap();
        assert_eq!(s.block(0, 0), (&[5.0, -2.0][..], &[0u8, 7][..]));
    }

    #[test]
    fn compress_rejects_violation() {
        let err = compress_nm(&row(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0]), p(2, 4));
        assert!(matches!(
            err,
            Err(SdqError::PatternViolation {
                row: 0,
                block: 1,
                nonzeros: 3,
                ..
            })
        ));
    }

    #[test]
    fn from_blocks_checks_invariants() {
        let pat = p(2, 4);
        assert!(StructuredSparseMatrix::from_blocks(1, 4, pat, vec![(vec![1.0, 2.0], vec![2, 1])]).is_err());
        assert!(StructuredSparseMatrix::from_blocks(1, 4, pat, vec![(vec![1.0], vec![4])]).is_err());
        assert!(StructuredSparseMatrix::from_blocks(1, 4, pat, vec![(vec![0.0], vec![0])]).is_err());
        assert!(StructuredSparseMatrix::from_blocks(1, 4, pat, vec![(vec![1.0; 3], vec![0, 1, 2])]).is_err());
    }

    #[test]
    fn padded_values_round_trip() {
        let w = DenseMatrix::from_rows(&[
            vec![0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 3.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.0],
        ])
        .unwrap();
        let s = compress_nm(&w, p(2, 4)).unwrap();
        let padded = s.padded_values();
        assert_eq!(padded.shape(), (2, 4));
        assert_eq!(padded.row(0), &[2.0, 0.0, 1.0, 3.0]);
        assert_eq!(padded.row(1), &[0.0, 0.0, 4.0, 0.0]);
        assert_eq!(s.with_padded_values(&padded).unwrap(), s);

        let zeroed = padded.map(|v| if v == 1.0 { 0.0 } else { v * 2.0 });
        let t = s.with_padded_values(&zeroed).unwrap();
        assert_eq!(t.block(0, 1), (&[6.0][..], &[2u8][..]));
    }

    #[test]
    fn matmul_small_cases() {
        let a = row(&[1.0, 2.0]);
        let b = DenseMatrix::new(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul_ref(&a, &b).unwrap().data(), &[11.0]);

        let m = DenseMatrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64 - 7.5);
        assert_eq!(matmul_ref(&DenseMatrix::identity(3), &m).unwrap(), m);
        assert!(matmul_ref(&m, &m).is_err());
    }

    #[test]
    fn spmm_small_cases() {
        let m = DenseMatrix::from_fn(4, 3, |i, j| (i + 2 * j) as f64 * 0.25 - 1.0);
        let eye = compress_nm(&DenseMatrix::identity(4), p(2, 4)).unwrap();
        assert_eq!(spmm_ref(&eye, &m).unwrap(), m);

        let zero = StructuredSparseMatrix::zeros(2, 4, p(1, 4)).unwrap();
        assert_eq!(spmm_ref(&zero, &m).unwrap(), DenseMatrix::zeros(2, 3));

        assert!(spmm_ref(&zero, &DenseMatrix::zeros(3, 3)).is_err());
    }
}
