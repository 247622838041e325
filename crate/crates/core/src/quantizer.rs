//! Scalar quantizers with saturation and the sub-interval correction index.
//!
//! Intervals are half-open `[T_m, T_{m+1})` except the last one, which is
//! closed. Inputs outside `[T_min, T_max]` are mapped to the nearest outer
//! interval. The representative of an interval is its lower edge, so the
//! quantization error `eta = x - T_m` lies in `[0, L)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_T_MIN: f64 = -6.0;
pub const DEFAULT_T_MAX: f64 = 6.0;
pub const MAX_BITS: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    boundaries: Vec<f64>,
    bits: u32,
}

/// Index of the sub-interval holding Alice's quantization error, `1..=K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CorrectionIndex {
    xi: u32,
    bits: u32,
}

/// How a receiver turns a correction index back into an offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconstruction {
    /// Sub-interval midpoint `(xi - 1/2) L / K`.
    #[default]
    Midpoint,
    /// `xi * L` with no division by `K`, kept only for comparison runs.
    Literal,
}

impl CorrectionIndex {
    pub fn new(xi: u32, bits: u32) -> Result<Self> {
        if bits > MAX_BITS {
            return Err(Error::InvalidCorrectionBits(bits));
        }
        if xi == 0 || xi > (1u32 << bits) {
            return Err(Error::SymbolOutOfRange { symbol: xi as usize, size: 1 << bits });
        }
        Ok(Self { xi, bits })
    }

    pub fn value(&self) -> u32 {
        self.xi
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn subintervals(&self) -> u32 {
        1 << self.bits
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if (1..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::BitsOutOfRange(bits))
    }
}

impl Quantizer {
    /// `2^b` equal intervals spanning `[t_min, t_max]`.
    pub fn uniform(bits: u32, t_min: f64, t_max: f64) -> Result<Self> {
        check_bits(bits)?;
        if !(t_min < t_max) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::InvalidRange { t_min, t_max });
        }
        let m = 1usize << bits;
        let step = (t_max - t_min) / m as f64;
        let mut boundaries: Vec<f64> = (0..=m).map(|i| t_min + step * i as f64).collect();
        boundaries[m] = t_max;
        Ok(Self { boundaries, bits })
    }

    /// `2^b` equal cells over `[lo, hi]`, with the two outer cells stretched
    /// to the saturation bounds `[t_min, t_max]`.
    ///
    /// With `[lo, hi] = [-3, 3]` and saturation at `±6` this is the uniform
    /// baseline used by the experiments.
    pub fn uniform_in(bits: u32, lo: f64, hi: f64, t_min: f64, t_max: f64) -> Result<Self> {
        let mut q = Self::uniform(bits, lo, hi)?;
        if !(t_min < q.boundaries[1]) || !(t_max > q.boundaries[q.boundaries.len() - 2]) {
            return Err(Error::InvalidRange { t_min, t_max });
        }
        let last = q.boundaries.len() - 1;
        q.boundaries[0] = t_min;
        q.boundaries[last] = t_max;
        Ok(q)
    }

    pub fn from_boundaries(boundaries: Vec<f64>) -> Result<Self> {
        let intervals = boundaries.len().saturating_sub(1);
        if intervals < 2 || !intervals.is_power_of_two() {
            return Err(Error::InvalidBoundaries);
        }
        if boundaries.iter().any(|t| !t.is_finite()) || boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidBoundaries);
        }
        let bits = intervals.trailing_zeros();
        check_bits(bits)?;
        Ok(Self { boundaries, bits })
    }

    pub fn from_interior(interior: &[f64], t_min: f64, t_max: f64) -> Result<Self> {
        let mut boundaries = Vec::with_capacity(interior.len() + 2);
        boundaries.push(t_min);
        boundaries.extend_from_slice(interior);
        boundaries.push(t_max);
        Self::from_boundaries(boundaries)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn levels(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn interior(&self) -> &[f64] {
        &self.boundaries[1..self.boundaries.len() - 1]
    }

    pub fn t_min(&self) -> f64 {
        self.boundaries[0]
    }

    pub fn t_max(&self) -> f64 {
        self.boundaries[self.boundaries.len() - 1]
    }

    /// Symbol index `m` with `T_m <= a < T_{m+1}`, saturating at both ends.
    #[inline]
    pub fn quantize(&self, a: f64) -> usize {
        // branch-free count; alphabets here are small
        self.interior().iter().map(|&t| (t <= a) as usize).sum()
    }

    /// Lower edge and length of the interval selected for `a`.
    #[inline]
    pub fn interval_of(&self, a: f64) -> (f64, f64) {
        self.cell(self.quantize(a))
    }

    #[inline]
    pub fn cell(&self, m: usize) -> (f64, f64) {
        let lo = self.boundaries[m];
        (lo, self.boundaries[m + 1] - lo)
    }

    /// Quantization error of `x` against its interval's lower edge, after
    /// clamping `x` into `[T_min, T_max]`.
    #[inline]
    pub fn error_of(&self, x: f64) -> (f64, f64) {
        let clamped = x.clamp(self.t_min(), self.t_max());
        let (lo, len) = self.interval_of(clamped);
        (clamped - lo, len)
    }

    /// `xi = ceil(eta K / L)` clamped to `1..=K`.
    pub fn encode_correction(&self, x: f64, bits: u32) -> CorrectionIndex {
        assert!(bits <= MAX_BITS, "correction bits {bits} above {MAX_BITS}");
        let (eta, len) = self.error_of(x);
        CorrectionIndex { xi: subinterval_index(eta, len, 1u32 << bits), bits }
    }

    /// Receiver-side offset estimate, scaled by the receiver's own interval
    /// length at its raw measurement `v`.
    pub fn decode_correction(&self, v: f64, xi: CorrectionIndex, mode: Reconstruction) -> f64 {
        let (_, len) = self.interval_of(v);
        reconstruct(xi.xi, len, xi.subintervals(), mode)
    }

    /// Text record with `b` and all boundaries at 17 significant digits.
    pub fn to_record(&self) -> String {
        let list: Vec<String> = self.boundaries.iter().map(|t| format!("{t:.16e}")).collect();
        format!("b = {}\nboundaries = [{}]\n", self.bits, list.join(", "))
    }

    pub fn from_record(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Record {
            b: u32,
            boundaries: Vec<f64>,
        }
        let rec: Record = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let q = Self::from_boundaries(rec.boundaries)?;
        if q.bits != rec.b {
            return Err(Error::InvalidBoundaries);
        }
        Ok(q)
    }
}

#[inline]
pub(crate) fn subinterval_index(eta: f64, len: f64, k: u32) -> u32 {
    let raw = (eta * k as f64 / len).ceil();
    raw.clamp(1.0, k as f64) as u32
}

#[inline]
pub(crate) fn reconstruct(xi: u32, len: f64, k: u32, mode: Reconstruction) -> f64 {
    match mode {
        Reconstruction::Midpoint => (xi as f64 - 0.5) * len / k as f64,
        Reconstruction::Literal => xi as f64 * len,
    }
}
