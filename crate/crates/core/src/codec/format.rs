//! Emulated low-bit number formats.
//!
//! Every format here is finite-only: codes that a hardware format would
//! spend on NaN are excluded, and there are no infinities. Values beyond the
//! largest magnitude saturate.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SdqError};

/// A raw code point, right-aligned in the low `total_bits` bits.
pub type Code = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FormatKind {
    /// Symmetric two's-complement integer; the most negative code is unused.
    SignedInt,
    /// Sign bit plus exponent and mantissa fields.
    Float,
    /// Exponent and mantissa fields only.
    UnsignedFloat,
}

/// How a real is mapped onto the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    /// Round to nearest, ties to even mantissa (or even integer).
    NearestEven,
    /// Smallest grid value that is not below the input.
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NumberFormat {
    kind: FormatKind,
    total_bits: u8,
    exponent_bits: u8,
    mantissa_bits: u8,
    bias: i32,
    /// The all-ones exponent+mantissa pattern encodes NaN and is not on the grid.
    nan_pattern: bool,
}

impl NumberFormat {
    pub const INT4: Self = Self::int_unchecked(4);
    pub const INT8: Self = Self::int_unchecked(8);
    /// e2m1, bias 1: {0, 0.5, 1, 1.5, 2, 3, 4, 6} and negatives.
    pub const FP4_E2M1: Self = Self {
        kind: FormatKind::Float,
        total_bits: 4,
        exponent_bits: 2,
        mantissa_bits: 1,
        bias: 1,
        nan_pattern: false,
    };
    /// e4m3, bias 7, finite-only with a single NaN pattern; max 448.
    pub const FP8_E4M3: Self = Self {
        kind: FormatKind::Float,
        total_bits: 8,
        exponent_bits: 4,
        mantissa_bits: 3,
        bias: 7,
        nan_pattern: true,
    };
    /// Unsigned e6m2, bias 31, subnormals included.
    pub const UFP8_E6M2: Self = Self {
        kind: FormatKind::UnsignedFloat,
        total_bits: 8,
        exponent_bits: 6,
        mantissa_bits: 2,
        bias: 31,
        nan_pattern: false,
    };

    const fn int_unchecked(bits: u8) -> Self {
        Self {
            kind: FormatKind::SignedInt,
            total_bits: bits,
            exponent_bits: 0,
            mantissa_bits: 0,
            bias: 0,
            nan_pattern: false,
        }
    }

    pub fn signed_int(bits: u8) -> Result<Self> {
        if !(2..=8).contains(&bits) {
            return Err(SdqError::InvalidFormat(format!(
                "integer width {bits} outside 2..=8"
            )));
        }
        Ok(Self::int_unchecked(bits))
    }

    pub fn float(exponent_bits: u8, mantissa_bits: u8, bias: i32, nan_pattern: bool) -> Result<Self> {
        Self::minifloat(FormatKind::Float, exponent_bits, mantissa_bits, bias, nan_pattern)
    }

    pub fn unsigned_float(exponent_bits: u8, mantissa_bits: u8, bias: i32) -> Result<Self> {
        Self::minifloat(FormatKind::UnsignedFloat, exponent_bits, mantissa_bits, bias, false)
    }

    fn minifloat(
        kind: FormatKind,
        exponent_bits: u8,
        mantissa_bits: u8,
        bias: i32,
        nan_pattern: bool,
    ) -> Result<Self> {
        let sign = u8::from(kind == FormatKind::Float);
        let total = sign + exponent_bits + mantissa_bits;
        if exponent_bits == 0 || !(2..=8).contains(&total) {
            return Err(SdqError::InvalidFormat(format!(
                "e{exponent_bits}m{mantissa_bits} does not fit a 2..=8 bit minifloat"
            )));
        }
        if nan_pattern && exponent_bits + mantissa_bits < 2 {
            return Err(SdqError::InvalidFormat("no room for a NaN pattern".into()));
        }
        Ok(Self {
            kind,
            total_bits: total,
            exponent_bits,
            mantissa_bits,
            bias,
            nan_pattern,
        })
    }

    pub fn kind(&self) -> FormatKind {
        self.kind
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits as u32
    }

    pub fn exponent_bits(&self) -> u32 {
        self.exponent_bits as u32
    }

    pub fn mantissa_bits(&self) -> u32 {
        self.mantissa_bits as u32
    }

    pub fn bias(&self) -> i32 {
        self.bias
    }

    pub fn is_signed(&self) -> bool {
        self.kind != FormatKind::UnsignedFloat
    }

    fn magnitude_bits(&self) -> u32 {
        self.exponent_bits() + self.mantissa_bits()
    }

    fn int_max(&self) -> i32 {
        (1 << (self.total_bits - 1)) - 1
    }

    fn min_exponent(&self) -> i32 {
        1 - self.bias
    }

    /// Largest finite magnitude.
    pub fn max_value(&self) -> f64 {
        match self.kind {
            FormatKind::SignedInt => self.int_max() as f64,
            _ => {
                let all = (1u32 << self.magnitude_bits()) - 1;
                let top = if self.nan_pattern { all - 1 } else { all };
                self.decode_magnitude(top)
            }
        }
    }

    /// Smallest positive grid value.
    pub fn min_positive(&self) -> f64 {
        match self.kind {
            FormatKind::SignedInt => 1.0,
            _ => self.decode_magnitude(1),
        }
    }

    fn decode_magnitude(&self, bits: u32) -> f64 {
        let man_mask = (1u32 << self.mantissa_bits) - 1;
        let exp_field = (bits >> self.mantissa_bits) as i32;
        let man = (bits & man_mask) as f64 / (1u32 << self.mantissa_bits) as f64;
        if exp_field == 0 {
            man * pow2(self.min_exponent())
        } else {
            (1.0 + man) * pow2(exp_field - self.bias)
        }
    }

    /// Whether `code` is a grid point of this format.
    pub fn is_valid_code(&self, code: Code) -> bool {
        if u32::from(code) >> self.total_bits != 0 {
            return false;
        }
        match self.kind {
            FormatKind::SignedInt => code != 1 << (self.total_bits - 1),
            _ => {
                let mag_mask = (1u32 << self.magnitude_bits()) - 1;
                !(self.nan_pattern && u32::from(code) & mag_mask == mag_mask)
            }
        }
    }

    /// Every valid code, ascending by code point.
    pub fn codes(&self) -> impl Iterator<Item = Code> + '_ {
        (0..(1u32 << self.total_bits))
            .map(|c| c as Code)
            .filter(|&c| self.is_valid_code(c))
    }

    pub fn decode(&self, code: Code) -> f64 {
        match self.kind {
            FormatKind::SignedInt => {
                let shift = 8 - self.total_bits;
                (((code << shift) as i8) >> shift) as f64
            }
            FormatKind::UnsignedFloat => self.decode_magnitude(code as u32),
            FormatKind::Float => {
                let mag_bits = self.magnitude_bits();
                let mag = self.decode_magnitude(code as u32 & ((1 << mag_bits) - 1));
                if (code as u32 >> mag_bits) & 1 == 1 {
                    -mag
                } else {
                    mag
                }
            }
        }
    }

    /// Maps `x` to a grid code. Out-of-range inputs saturate to `±max_value`,
    /// and results that land on zero always use the `+0` code.
    pub fn round(&self, x: f64, mode: Rounding) -> Code {
        debug_assert!(!x.is_nan());
        match self.kind {
            FormatKind::SignedInt => {
                let q = self.int_max() as f64;
                let r = match mode {
                    Rounding::NearestEven => x.round_ties_even(),
                    Rounding::Up => x.ceil(),
                };
                let v = r.clamp(-q, q) as i32;
                (v as i8 as u8) & ((1u16 << self.total_bits) - 1) as u8
            }
            FormatKind::UnsignedFloat if x <= 0.0 => 0,
            _ => {
                let negative = x < 0.0;
                // Upward rounding of a negative value is truncation of its magnitude.
                let mag_mode = match (mode, negative) {
                    (Rounding::Up, true) => MagnitudeRounding::Down,
                    (Rounding::Up, false) => MagnitudeRounding::Up,
                    (Rounding::NearestEven, _) => MagnitudeRounding::NearestEven,
                };
                let v = self.round_magnitude(x.abs(), mag_mode);
                if v == 0.0 {
                    return 0;
                }
                let bits = self.encode_magnitude(v);
                if negative {
                    bits | (1 << self.magnitude_bits())
                } else {
                    bits
                }
            }
        }
    }

    /// Nearest-even rounding; see [`round`](Self::round).
    pub fn round_nearest(&self, x: f64) -> Code {
        self.round(x, Rounding::NearestEven)
    }

    /// Snaps `x` to the grid value it rounds to.
    pub fn quantize_value(&self, x: f64) -> f64 {
        self.decode(self.round_nearest(x))
    }

    fn round_magnitude(&self, a: f64, mode: MagnitudeRounding) -> f64 {
        if a == 0.0 {
            return 0.0;
        }
        let max = self.max_value();
        if a >= max {
            return max;
        }
        let exp = floor_log2(a).max(self.min_exponent());
        let quantum = pow2(exp - self.mantissa_bits as i32);
        let r = a / quantum;
        let steps = match mode {
            MagnitudeRounding::NearestEven => r.round_ties_even(),
            MagnitudeRounding::Up => r.ceil(),
            MagnitudeRounding::Down => r.floor(),
        };
        (steps * quantum).min(max)
    }

    /// Encodes a positive grid magnitude.
    fn encode_magnitude(&self, v: f64) -> Code {
        let emin = self.min_exponent();
        let m = self.mantissa_bits as i32;
        let (exp_field, man) = if v < pow2(emin) {
            (0, v / pow2(emin - m))
        } else {
            let e = floor_log2(v);
            (e + self.bias, (v / pow2(e) - 1.0) * pow2(m))
        };
        debug_assert_eq!(man.fract(), 0.0, "{v} is not on the grid");
        ((exp_field as u32) << self.mantissa_bits | man as u32) as Code
    }

    /// All representable values in ascending order. Signed minifloats list
    /// both `-0` and `+0` (ordered by `total_cmp`).
    pub fn enumerate_grid(&self) -> Vec<f64> {
        let mut grid: Vec<f64> = self.codes().map(|c| self.decode(c)).collect();
        grid.sort_by(f64::total_cmp);
        grid
    }

    /// Preset name understood by [`FromStr`].
    pub fn name(&self) -> String {
        match (self.kind, *self) {
            (_, Self::FP4_E2M1) => "fp4".into(),
            (_, Self::FP8_E4M3) => "fp8-e4m3".into(),
            (_, Self::UFP8_E6M2) => "ufp8-e6m2".into(),
            (FormatKind::SignedInt, _) => format!("int{}", self.total_bits),
            (FormatKind::Float, _) => format!(
                "fp{}-e{}m{}-b{}",
                self.total_bits, self.exponent_bits, self.mantissa_bits, self.bias
            ),
            (FormatKind::UnsignedFloat, _) => format!(
                "ufp{}-e{}m{}-b{}",
                self.total_bits, self.exponent_bits, self.mantissa_bits, self.bias
            ),
        }
    }
}

#[derive(Clone, Copy)]
enum MagnitudeRounding {
    NearestEven,
    Up,
    Down,
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

fn floor_log2(a: f64) -> i32 {
    let biased = ((a.to_bits() >> 52) & 0x7ff) as i32;
    if biased == 0 {
        a.log2().floor() as i32
    } else {
        biased - 1023
    }
}

impl fmt::Display for NumberFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for NumberFormat {
    type Err = SdqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp4" | "fp4-e2m1" => Ok(Self::FP4_E2M1),
            "fp8" | "fp8-e4m3" => Ok(Self::FP8_E4M3),
            "ufp8" | "ufp8-e6m2" => Ok(Self::UFP8_E6M2),
            _ => {
                if let Some(bits) = s.strip_prefix("int").and_then(|b| b.parse::<u8>().ok()) {
                    return Self::signed_int(bits);
                }
                Err(SdqError::InvalidFormat(format!("unknown format {s:?}")))
            }
        }
    }
}

/// Parses a scale-format option, where `none` means unquantized scales.
pub fn parse_optional_format(s: &str) -> Result<Option<NumberFormat>> {
    if s == "none" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}
