//! Advantage-distillation schemes run sample by sample over a dataset.
//!
//! * NEC: every party quantizes its raw feature.
//! * ADQC: Alice publishes the sub-interval index of her quantization error;
//!   Bob and Eve shift their features by the reconstructed offset before
//!   quantizing.
//! * GB: uniform grid with guard regions around each interior threshold;
//!   Alice discards samples that land in a guard and announces the kept
//!   indices.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Tally;
use crate::quantizer::{
    reconstruct, subinterval_index, CorrectionIndex, Quantizer, Reconstruction, DEFAULT_T_MAX,
    DEFAULT_T_MIN, MAX_BITS,
};
use crate::source::{Dataset, TriSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Adqc,
    Nec,
    Gb,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Adqc => "ADQC",
            SchemeKind::Nec => "NEC",
            SchemeKind::Gb => "GB",
        })
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adqc" => Ok(SchemeKind::Adqc),
            "nec" => Ok(SchemeKind::Nec),
            "gb" => Ok(SchemeKind::Gb),
            other => Err(Error::InvalidScheme(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub bits: u32,
    pub correction_bits: Option<u32>,
    pub guard_width: Option<f64>,
}

impl SchemeSpec {
    pub fn nec(bits: u32) -> Self {
        Self { kind: SchemeKind::Nec, bits, correction_bits: None, guard_width: None }
    }

    pub fn adqc(bits: u32, correction_bits: u32) -> Self {
        Self { kind: SchemeKind::Adqc, bits, correction_bits: Some(correction_bits), guard_width: None }
    }

    pub fn gb(bits: u32, guard_width: f64) -> Self {
        Self { kind: SchemeKind::Gb, bits, correction_bits: None, guard_width: Some(guard_width) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BITS).contains(&self.bits) {
            return Err(Error::BitsOutOfRange(self.bits));
        }
        match (self.kind, self.correction_bits, self.guard_width) {
            (SchemeKind::Adqc, Some(cb), None) => {
                if (1..=MAX_BITS).contains(&cb) {
                    Ok(())
                } else {
                    Err(Error::InvalidCorrectionBits(cb))
                }
            }
            (SchemeKind::Nec, None, None) => Ok(()),
            (SchemeKind::Gb, None, Some(g)) => {
                if g >= 0.0 && g.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidScheme(format!("guard width {g} must be non-negative")))
                }
            }
            _ => Err(Error::InvalidScheme(format!(
                "{}: correction bits only apply to ADQC and guard width only to GB",
                self.kind
            ))),
        }
    }

    /// Public-channel bits per extracted key bit spent on distillation.
    pub fn beta(&self) -> f64 {
        self.correction_bits.map_or(0.0, |cb| cb as f64 / self.bits as f64)
    }
}

/// Protocol knobs that exist for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdqcOptions {
    pub reconstruction: Reconstruction,
    /// Shift the corrected value by half the receiver's interval so the
    /// decision is taken at the cell midpoint rather than its lower edge.
    pub recenter: bool,
}

impl Default for AdqcOptions {
    fn default() -> Self {
        Self { reconstruction: Reconstruction::Midpoint, recenter: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Symbols {
    pub a: u16,
    pub b: u16,
    pub e: u16,
    /// Eve's symbol when she ignores the public correction (ADQC only).
    pub e_blind: Option<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolOutcome {
    /// `None` for samples discarded by the guard-band rule.
    pub symbols: Option<Symbols>,
    pub xi: Option<CorrectionIndex>,
    pub retained: bool,
}

fn check_sizes(qa: &Quantizer, qb: &Quantizer, qe: &Quantizer) -> Result<()> {
    for q in [qb, qe] {
        if q.levels() != qa.levels() {
            return Err(Error::MismatchedSymbolSizes(qa.levels(), q.levels()));
        }
    }
    Ok(())
}

fn check_correction_bits(bits: u32) -> Result<()> {
    if (1..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidCorrectionBits(bits))
    }
}

#[inline]
pub(crate) fn nec_sample(qa: &Quantizer, qb: &Quantizer, qe: &Quantizer, s: &TriSample) -> Symbols {
    Symbols {
        a: qa.quantize(s.x) as u16,
        b: qb.quantize(s.y) as u16,
        e: qe.quantize(s.z) as u16,
        e_blind: None,
    }
}

/// Alice's symbol and the sub-interval index she publishes.
#[inline]
pub(crate) fn alice_correction(qa: &Quantizer, x: f64, k: u32) -> (usize, u32) {
    let clamped = x.clamp(qa.t_min(), qa.t_max());
    let a = qa.quantize(clamped);
    let (lo, len) = qa.cell(a);
    (a, subinterval_index(clamped - lo, len, k))
}

/// Receiver's decision for raw value `v` whose own interval has length `len`.
#[inline]
pub(crate) fn corrected_decision(
    q: &Quantizer,
    v: f64,
    len: f64,
    xi: u32,
    k: u32,
    opts: &AdqcOptions,
) -> usize {
    let eta_hat = reconstruct(xi, len, k, opts.reconstruction);
    let shifted = if opts.recenter { v - eta_hat + 0.5 * len } else { v - eta_hat };
    q.quantize(shifted)
}

/// Receiver's corrected symbol together with its raw (uncorrected) symbol.
#[inline]
fn corrected_symbol(q: &Quantizer, v: f64, xi: u32, k: u32, opts: &AdqcOptions) -> (u16, u16) {
    let raw = q.quantize(v);
    let len = q.cell(raw).1;
    (corrected_decision(q, v, len, xi, k, opts) as u16, raw as u16)
}

#[inline]
fn adqc_sample(
    qa: &Quantizer,
    qb: &Quantizer,
    qe: &Quantizer,
    s: &TriSample,
    k: u32,
    opts: &AdqcOptions,
) -> (Symbols, u32) {
    let (a, xi) = alice_correction(qa, s.x, k);
    let (e, e_blind) = corrected_symbol(qe, s.z, xi, k, opts);
    let symbols = Symbols {
        a: a as u16,
        b: corrected_symbol(qb, s.y, xi, k, opts).0,
        e,
        e_blind: Some(e_blind),
    };
    (symbols, xi)
}

pub fn run_nec(
    qa: &Quantizer,
    qb: &Quantizer,
    qe: &Quantizer,
    ds: &Dataset,
) -> Result<Vec<ProtocolOutcome>> {
    check_sizes(qa, qb, qe)?;
    Ok(ds
        .samples
        .par_iter()
        .map(|s| ProtocolOutcome { symbols: Some(nec_sample(qa, qb, qe, s)), xi: None, retained: true })
        .collect())
}

pub fn run_adqc(
    qa: &Quantizer,
    qb: &Quantizer,
    qe: &Quantizer,
    ds: &Dataset,
    correction_bits: u32,
    opts: &AdqcOptions,
) -> Result<Vec<ProtocolOutcome>> {
    check_sizes(qa, qb, qe)?;
    check_correction_bits(correction_bits)?;
    let k = 1u32 << correction_bits;
    Ok(ds
        .samples
        .par_iter()
        .map(|s| {
            let (symbols, xi) = adqc_sample(qa, qb, qe, s, k, opts);
            ProtocolOutcome {
                symbols: Some(symbols),
                xi: Some(CorrectionIndex::new(xi, correction_bits).expect("index within 1..=K")),
                retained: true,
            }
        })
        .collect())
}

/// Uniform grid plus guard regions of total width `guard_width` centred on
/// each interior threshold.
#[derive(Debug, Clone)]
pub struct GuardedGrid {
    grid: Quantizer,
    half_guard: f64,
}

impl GuardedGrid {
    pub fn new(bits: u32, guard_width: f64) -> Result<Self> {
        let grid = Quantizer::uniform(bits, DEFAULT_T_MIN, DEFAULT_T_MAX)?;
        let cell = grid.cell(0).1;
        if !(guard_width >= 0.0) {
            return Err(Error::InvalidScheme(format!("guard width {guard_width} must be non-negative")));
        }
        if guard_width >= cell {
            return Err(Error::GuardTooWide { guard: guard_width, cell });
        }
        Ok(Self { grid, half_guard: 0.5 * guard_width })
    }

    pub fn grid(&self) -> &Quantizer {
        &self.grid
    }

    /// True when `x` lies strictly inside a guard region.
    #[inline]
    pub fn in_guard(&self, x: f64) -> bool {
        if self.half_guard == 0.0 {
            return false;
        }
        let m = self.grid.quantize(x);
        let edges = self.grid.boundaries();
        let below = m > 0 && (x - edges[m]).abs() < self.half_guard;
        let above = m + 1 < self.grid.levels() && (edges[m + 1] - x).abs() < self.half_guard;
        below || above
    }
}

pub fn run_gb(bits: u32, guard_width: f64, ds: &Dataset) -> Result<Vec<ProtocolOutcome>> {
    let guarded = GuardedGrid::new(bits, guard_width)?;
    let q = guarded.grid();
    Ok(ds
        .samples
        .par_iter()
        .map(|s| {
            if guarded.in_guard(s.x) {
                ProtocolOutcome { symbols: None, xi: None, retained: false }
            } else {
                ProtocolOutcome { symbols: Some(nec_sample(q, q, q, s)), xi: None, retained: true }
            }
        })
        .collect())
}

/// Runs a scheme and returns its outcomes. GB ignores the three quantizers
/// and uses its fixed guarded grid.
pub fn run_scheme(
    scheme: &SchemeSpec,
    qa: &Quantizer,
    qb: &Quantizer,
    qe: &Quantizer,
    ds: &Dataset,
    opts: &AdqcOptions,
) -> Result<Vec<ProtocolOutcome>> {
    scheme.validate()?;
    match scheme.kind {
        SchemeKind::Nec => run_nec(qa, qb, qe, ds),
        SchemeKind::Adqc => run_adqc(qa, qb, qe, ds, scheme.correction_bits.unwrap_or(0), opts),
        SchemeKind::Gb => run_gb(scheme.bits, scheme.guard_width.unwrap_or(0.0), ds),
    }
}

const CHUNK: usize = 1 << 14;

/// Histogram-only evaluation of a scheme, without materialising outcomes.
/// Produces the same counts as tallying the output of [`run_scheme`].
pub fn tally_scheme(
    scheme: &SchemeSpec,
    qa: &Quantizer,
    qb: &Quantizer,
    qe: &Quantizer,
    ds: &Dataset,
    opts: &AdqcOptions,
) -> Result<Tally> {
    scheme.validate()?;
    let m = 1usize << scheme.bits;
    let blind = scheme.kind == SchemeKind::Adqc;
    let tally = match scheme.kind {
        SchemeKind::Nec => {
            check_sizes(qa, qb, qe)?;
            if qa.levels() != m {
                return Err(Error::MismatchedSymbolSizes(m, qa.levels()));
            }
            chunked_tally(ds, m, blind, |t, s| t.record(&nec_sample(qa, qb, qe, s)))
        }
        SchemeKind::Adqc => {
            check_sizes(qa, qb, qe)?;
            if qa.levels() != m {
                return Err(Error::MismatchedSymbolSizes(m, qa.levels()));
            }
            let k = 1u32 << scheme.correction_bits.unwrap_or(0);
            chunked_tally(ds, m, blind, |t, s| t.record(&adqc_sample(qa, qb, qe, s, k, opts).0))
        }
        SchemeKind::Gb => {
            let guarded = GuardedGrid::new(scheme.bits, scheme.guard_width.unwrap_or(0.0))?;
            let q = guarded.grid();
            chunked_tally(ds, m, blind, |t, s| {
                if guarded.in_guard(s.x) {
                    t.record_discard();
                } else {
                    t.record(&nec_sample(q, q, q, s));
                }
            })
        }
    };
    Ok(tally)
}

fn chunked_tally<F>(ds: &Dataset, m: usize, blind: bool, per_sample: F) -> Tally
where
    F: Fn(&mut Tally, &TriSample) + Sync,
{
    ds.samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut t = Tally::new(m, blind);
            for s in chunk {
                per_sample(&mut t, s);
            }
            t
        })
        .reduce(|| Tally::new(m, blind), |mut a, b| {
            a.merge(&b);
            a
        })
}

/// Writes the debugging trace `x,y,z,sym_a,sym_b,sym_e,xi,retained`.
pub fn write_trace<W: Write>(
    out: &mut W,
    ds: &Dataset,
    outcomes: &[ProtocolOutcome],
) -> std::io::Result<()> {
    writeln!(out, "x,y,z,sym_a,sym_b,sym_e,xi,retained")?;
    for (s, o) in ds.samples.iter().zip(outcomes) {
        write!(out, "{:e},{:e},{:e},", s.x, s.y, s.z)?;
        match o.symbols {
            Some(sym) => write!(out, "{},{},{},", sym.a, sym.b, sym.e)?,
            None => write!(out, ",,,")?,
        }
        match o.xi {
            Some(xi) => write!(out, "{},", xi.value())?,
            None => write!(out, ",")?,
        }
        writeln!(out, "{}", o.retained)?;
    }
    Ok(())
}
