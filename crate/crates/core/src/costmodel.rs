//! Analytical cost models: effective compute throughput relative to dense
//! 16-bit execution, and storage bits per weight including sparsity index
//! metadata and quantization scale metadata.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SdqError};
use crate::tensor::SparsityPattern;

/// Bit width of the dense baseline format.
pub const BASELINE_BITS: u32 = 16;

/// Speedup from skipping pruned values: `M / N`.
pub fn throughput_sparsity(pattern: SparsityPattern) -> f64 {
    pattern.m() as f64 / pattern.n() as f64
}

/// Speedup from `bits`-wide arithmetic on both operands: `16 / bits`.
pub fn throughput_quant(bits: u32) -> Result<f64> {
    if !(2..=BASELINE_BITS).contains(&bits) {
        return Err(SdqError::InvalidArgument(format!(
            "operand width {bits} outside 2..=16"
        )));
    }
    Ok(BASELINE_BITS as f64 / bits as f64)
}

/// One SpMM branch: its N:M pattern and the operand width it runs at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub pattern: SparsityPattern,
    pub bits: u32,
}

/// `1 / Σ_k (N_k/M)·(b_k/16)` over parallel branches sharing one `M`.
pub fn throughput_sdq(branches: &[Branch]) -> Result<f64> {
    let first = branches
        .first()
        .ok_or_else(|| SdqError::InvalidArgument("no branches".into()))?;
    let mut time = 0.0;
    for b in branches {
        if b.pattern.m() != first.pattern.m() {
            return Err(SdqError::Inconsistent(format!(
                "branches mix block sizes {} and {}",
                first.pattern, b.pattern
            )));
        }
        time += b.pattern.density() / throughput_quant(b.bits)?;
    }
    Ok(1.0 / time)
}

/// Throughput as printed in tables, e.g. `3.6×`.
pub fn format_throughput(t: f64) -> String {
    format!("{t:.1}×")
}

/// How nonzero positions are recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexEncoding {
    /// `log2(M)` bits per stored value.
    Ellpack,
    /// One bit per original element.
    Bitmask,
    None,
}

impl IndexEncoding {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ellpack => "ellpack",
            Self::Bitmask => "bitmask",
            Self::None => "none",
        }
    }
}

impl FromStr for IndexEncoding {
    type Err = SdqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellpack" => Ok(Self::Ellpack),
            "bitmask" => Ok(Self::Bitmask),
            "none" => Ok(Self::None),
            _ => Err(SdqError::InvalidArgument(format!(
                "unknown index encoding {s:?} (expected ellpack, bitmask, none)"
            ))),
        }
    }
}

/// Bits per original weight element, split by purpose.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BitBreakdown {
    pub data: f64,
    /// Sparsity index metadata (Metadata-S).
    pub index: f64,
    /// Scale-factor metadata (Metadata-Q).
    pub scale: f64,
}

impl BitBreakdown {
    pub fn total(&self) -> f64 {
        self.data + self.index + self.scale
    }

    fn add(self, other: Self) -> Self {
        Self {
            data: self.data + other.data,
            index: self.index + other.index,
            scale: self.scale + other.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub effective_throughput: f64,
    pub bits_per_weight: f64,
    pub breakdown: BitBreakdown,
    /// One entry per branch of a decomposed configuration.
    pub branches: Vec<CostReport>,
}

impl CostReport {
    fn from_parts(effective_throughput: f64, breakdown: BitBreakdown, branches: Vec<Self>) -> Self {
        Self {
            effective_throughput,
            bits_per_weight: breakdown.total(),
            breakdown,
            branches,
        }
    }

    /// Components sum to the total, throughput is positive, and branch
    /// breakdowns sum to the parent's.
    pub fn is_consistent(&self) -> bool {
        let sums = self.breakdown.total() == self.bits_per_weight;
        let branches_sum = self.branches.is_empty() || {
            let b = self
                .branches
                .iter()
                .fold(BitBreakdown::default(), |acc, r| acc.add(r.breakdown));
            b == self.breakdown
        };
        sums && branches_sum
            && self.effective_throughput > 0.0
            && self.branches.iter().all(Self::is_consistent)
    }
}

/// Storage parameters of one quantized (and possibly sparse) tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageSpec {
    pub pattern: SparsityPattern,
    pub data_bits: u32,
    pub scale_bits: u32,
    pub qvs: usize,
    pub index: IndexEncoding,
}

/// Average bits per original weight element.
///
/// Q-Vectors tile the stored (compressed) values, so scale metadata scales
/// with `N/M` as well. Dense patterns never carry index metadata.
pub fn bits_per_weight(spec: StorageSpec) -> Result<CostReport> {
    if spec.qvs == 0 {
        return Err(SdqError::InvalidArgument("q-vector size must be positive".into()));
    }
    if spec.data_bits == 0 {
        return Err(SdqError::InvalidArgument("data width must be positive".into()));
    }
    let density = spec.pattern.density();
    let index = match (spec.pattern.is_dense(), spec.index) {
        (true, _) | (_, IndexEncoding::None) => 0.0,
        (false, IndexEncoding::Ellpack) => density * spec.pattern.index_bits() as f64,
        (false, IndexEncoding::Bitmask) => 1.0,
    };
    let breakdown = BitBreakdown {
        data: density * spec.data_bits as f64,
        index,
        scale: density * spec.scale_bits as f64 / spec.qvs as f64,
    };
    let throughput = throughput_sdq(&[Branch {
        pattern: spec.pattern,
        bits: spec.data_bits.clamp(2, BASELINE_BITS),
    }])?;
    Ok(CostReport::from_parts(throughput, breakdown, Vec::new()))
}

/// Cost of several branches stored side by side; throughput composes as in
/// [`throughput_sdq`] with each branch's operand width.
pub fn decomposed_cost(branches: &[(StorageSpec, u32)]) -> Result<CostReport> {
    let mut subs = Vec::with_capacity(branches.len());
    let mut compute = Vec::with_capacity(branches.len());
    for &(storage, operand_bits) in branches {
        let mut sub = bits_per_weight(storage)?;
        sub.effective_throughput = throughput_sdq(&[Branch {
            pattern: storage.pattern,
            bits: operand_bits,
        }])?;
        subs.push(sub);
        compute.push(Branch {
            pattern: storage.pattern,
            bits: operand_bits,
        });
    }
    let total = subs
        .iter()
        .fold(BitBreakdown::default(), |acc, r| acc.add(r.breakdown));
    Ok(CostReport::from_parts(throughput_sdq(&compute)?, total, subs))
}

/// One bar of the metadata figure: a fixed-size tile of original elements.
#[derive(Debug, Clone, PartialEq)]
pub struct TileCost {
    pub label: String,
    pub tile: usize,
    pub data_bits: u64,
    pub meta_s_bits: u64,
    pub meta_q_bits: u64,
    pub effective_throughput: f64,
}

impl TileCost {
    pub fn total_bits(&self) -> u64 {
        self.data_bits + self.meta_s_bits + self.meta_q_bits
    }

    pub fn bits_per_weight(&self) -> f64 {
        self.total_bits() as f64 / self.tile as f64
    }
}

impl fmt::Display for TileCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{:?},{:?}",
            self.label,
            self.data_bits,
            self.meta_s_bits,
            self.meta_q_bits,
            self.bits_per_weight(),
            self.effective_throughput
        )
    }
}

/// Storage of a `tile`-element slice in ELLPACK form.
///
/// A tile stores `tile·N/M` values; a partially filled trailing Q-Vector
/// still needs its own scale factor, so the scale count rounds up.
pub fn tile_cost(spec: StorageSpec, tile: usize) -> Result<TileCost> {
    let m = spec.pattern.m();
    if tile == 0 || !tile.is_multiple_of(m) {
        return Err(SdqError::InvalidArgument(format!(
            "tile of {tile} elements is not a whole number of {m}-blocks"
        )));
    }
    if spec.qvs == 0 {
        return Err(SdqError::InvalidArgument("q-vector size must be positive".into()));
    }
    let stored = (tile / m * spec.pattern.n()) as u64;
    let meta_s = match (spec.pattern.is_dense(), spec.index) {
        (true, _) | (_, IndexEncoding::None) => 0,
        (false, IndexEncoding::Ellpack) => stored * spec.pattern.index_bits() as u64,
        (false, IndexEncoding::Bitmask) => tile as u64,
    };
    let scales = stored.div_ceil(spec.qvs as u64);
    let label = if spec.pattern.is_dense() {
        format!("dense-{}b-sf{}-qvs{}", spec.data_bits, spec.scale_bits, spec.qvs)
    } else {
        format!(
            "{}-{}b-sf{}-qvs{}",
            spec.pattern, spec.data_bits, spec.scale_bits, spec.qvs
        )
    };
    Ok(TileCost {
        label,
        tile,
        data_bits: stored * spec.data_bits as u64,
        meta_s_bits: meta_s,
        meta_q_bits: scales * spec.scale_bits as u64,
        effective_throughput: throughput_sdq(&[Branch {
            pattern: spec.pattern,
            bits: spec.data_bits.clamp(2, BASELINE_BITS),
        }])?,
    })
}

/// The configurations of the metadata overhead figure: 1:4, 2:4, 3:4 and
/// dense at 4-bit data, under a 32-bit scale with 16-value Q-Vectors and an
/// 8-bit scale with 32-value Q-Vectors.
pub fn metadata_figure_configs() -> Vec<StorageSpec> {
    let mut out = Vec::new();
    for (scale_bits, qvs) in [(32, 16), (8, 32)] {
        for n in [1, 2, 3, 4] {
            out.push(StorageSpec {
                pattern: SparsityPattern::new(n, 4).expect("n <= 4"),
                data_bits: 4,
                scale_bits,
                qvs,
                index: IndexEncoding::Ellpack,
            });
        }
    }
    out
}

pub const FIGURE_TILE: usize = 32;

pub fn metadata_figure(configs: &[StorageSpec]) -> Result<Vec<TileCost>> {
    configs.iter().map(|c| tile_cost(*c, FIGURE_TILE)).collect()
}

pub const CSV_HEADER: &str =
    "config,data_bits,meta_s_bits,meta_q_bits,bits_per_weight,effective_throughput";

pub fn figure_csv(rows: &[TileCost]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}
