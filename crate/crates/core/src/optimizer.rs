//! Adversarial quantizer design.
//!
//! Eve picks her thresholds to minimise the secret-key lower bound for fixed
//! legitimate quantizers, then Alice and Bob jointly pick theirs to maximise
//! it against Eve's current choice, and so on. Each half-step is a budgeted
//! derivative-free search on a fixed design dataset, over the unconstrained
//! coordinates `(T_1, ln(T_2 - T_1), ..., ln(T_{M-1} - T_{M-2}))`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{report_from_tally, JointPmf, Tally};
use crate::protocol::{
    alice_correction, corrected_decision, tally_scheme, AdqcOptions, SchemeKind, SchemeSpec,
};
use crate::quantizer::{Quantizer, DEFAULT_T_MAX, DEFAULT_T_MIN};
use crate::simplex::{self, SimplexOptions};
use crate::source::Dataset;

pub const DEFAULT_MIN_GAP: f64 = 1e-4;
/// Half-width of the range the uniform starting quantizers are laid out on.
pub const DEFAULT_UNIFORM_SPAN: f64 = 3.0;
/// Largest alphabet the design loop handles (symbols are stored as bytes).
pub const MAX_DESIGN_BITS: u32 = 8;

/// Saturation bounds and minimum spacing shared by all threshold vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBounds {
    pub t_min: f64,
    pub t_max: f64,
    pub min_gap: f64,
}

impl Default for ThresholdBounds {
    fn default() -> Self {
        Self { t_min: DEFAULT_T_MIN, t_max: DEFAULT_T_MAX, min_gap: DEFAULT_MIN_GAP }
    }
}

/// Interior thresholds `T_1 < ... < T_{M-1}` of one quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    interior: Vec<f64>,
}

impl ThresholdVector {
    pub fn new(interior: Vec<f64>, bounds: &ThresholdBounds) -> Result<Self> {
        let count = interior.len() + 1;
        if count < 2 || !count.is_power_of_two() {
            return Err(Error::InvalidThresholds(format!(
                "{} interior thresholds do not give a power-of-two alphabet",
                interior.len()
            )));
        }
        if !feasible(&interior, bounds) {
            return Err(Error::InvalidThresholds(format!(
                "thresholds must increase by at least {} inside ({}, {})",
                bounds.min_gap, bounds.t_min, bounds.t_max
            )));
        }
        Ok(Self { interior })
    }

    /// Uniform cells over `[-span, span]`; the outer cells saturate.
    pub fn uniform(bits: u32, span: f64, bounds: &ThresholdBounds) -> Result<Self> {
        let q = Quantizer::uniform_in(bits, -span, span, bounds.t_min, bounds.t_max)?;
        Self::new(q.interior().to_vec(), bounds)
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn bits(&self) -> u32 {
        (self.interior.len() + 1).trailing_zeros()
    }

    pub fn quantizer(&self, bounds: &ThresholdBounds) -> Quantizer {
        Quantizer::from_interior(&self.interior, bounds.t_min, bounds.t_max)
            .expect("validated thresholds form a quantizer")
    }

    /// Search coordinates: first threshold followed by log-gaps.
    pub fn to_search_coords(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.interior.len());
        theta.push(self.interior[0]);
        theta.extend(self.interior.windows(2).map(|w| (w[1] - w[0]).ln()));
        theta
    }

    /// Inverse of [`to_search_coords`](Self::to_search_coords); `None` when
    /// the point violates the bounds or the minimum gap.
    pub fn from_search_coords(theta: &[f64], bounds: &ThresholdBounds) -> Option<Self> {
        let mut interior = Vec::with_capacity(theta.len());
        let mut t = *theta.first()?;
        interior.push(t);
        for g in &theta[1..] {
            t += g.exp();
            interior.push(t);
        }
        feasible(&interior, bounds).then_some(Self { interior })
    }
}

fn feasible(interior: &[f64], bounds: &ThresholdBounds) -> bool {
    let (Some(&first), Some(&last)) = (interior.first(), interior.last()) else {
        return false;
    };
    interior.iter().all(|t| t.is_finite())
        && first - bounds.t_min >= bounds.min_gap
        && bounds.t_max - last >= bounds.min_gap
        && interior.windows(2).all(|w| w[1] - w[0] >= bounds.min_gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub restarts: usize,
    /// Objective evaluations per half-step.
    pub budget: usize,
    pub initial_step: f64,
    pub seed: u64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self { restarts: 3, budget: 2000, initial_step: 0.25, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub scheme: SchemeSpec,
    pub max_outer_iters: usize,
    pub objective_tolerance: f64,
    pub search: SearchSettings,
    pub bounds: ThresholdBounds,
    pub uniform_span: f64,
    pub protocol: AdqcOptions,
    /// Let Eve best-respond once more after the last Alice–Bob step.
    pub final_eve_step: bool,
}

impl OptimizerConfig {
    pub fn new(scheme: SchemeSpec) -> Self {
        Self {
            scheme,
            max_outer_iters: 10,
            objective_tolerance: 1e-3,
            search: SearchSettings::default(),
            bounds: ThresholdBounds::default(),
            uniform_span: DEFAULT_UNIFORM_SPAN,
            protocol: AdqcOptions::default(),
            final_eve_step: true,
        }
    }

    fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.scheme.kind == SchemeKind::Gb {
            return Err(Error::InvalidScheme("the guard-band grid is fixed, nothing to optimise".into()));
        }
        if self.scheme.bits > MAX_DESIGN_BITS {
            return Err(Error::InvalidScheme(format!(
                "quantizer design supports at most {MAX_DESIGN_BITS} bits per symbol"
            )));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidPlan("max_outer_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Secret-key lower bound of `scheme` on `ds` with the given thresholds.
pub fn objective(
    t_a: &ThresholdVector,
    t_b: &ThresholdVector,
    t_e: &ThresholdVector,
    scheme: &SchemeSpec,
    ds: &Dataset,
) -> Result<f64> {
    objective_with(t_a, t_b, t_e, scheme, ds, &ThresholdBounds::default(), &AdqcOptions::default())
}

pub fn objective_with(
    t_a: &ThresholdVector,
    t_b: &ThresholdVector,
    t_e: &ThresholdVector,
    scheme: &SchemeSpec,
    ds: &Dataset,
    bounds: &ThresholdBounds,
    opts: &AdqcOptions,
) -> Result<f64> {
    let (qa, qb, qe) = (t_a.quantizer(bounds), t_b.quantizer(bounds), t_e.quantizer(bounds));
    let tally = tally_scheme(scheme, &qa, &qb, &qe, ds, opts)?;
    Ok(report_from_tally(&tally, scheme)?.c_sk_low)
}

/// Objective evaluation that caches whatever the current half-step keeps
/// fixed. Produces the same histograms as [`tally_scheme`].
struct Evaluator<'a> {
    ds: &'a Dataset,
    scheme: SchemeSpec,
    opts: AdqcOptions,
    levels: usize,
    k: u32,
}

impl<'a> Evaluator<'a> {
    fn new(ds: &'a Dataset, scheme: SchemeSpec, opts: AdqcOptions) -> Self {
        let k = scheme.correction_bits.map_or(1, |cb| 1u32 << cb);
        Self { ds, scheme, opts, levels: 1 << scheme.bits, k }
    }

    fn adqc(&self) -> bool {
        self.scheme.kind == SchemeKind::Adqc
    }

    fn finish(&self, counts: PairCounts) -> f64 {
        counts
            .into_tally()
            .and_then(|t| report_from_tally(&t, &self.scheme))
            .map_or(f64::NAN, |r| r.c_sk_low)
    }

    /// Fixes Alice's and Bob's quantizers for an Eve step.
    fn with_legitimate(&self, qa: &Quantizer, qb: &Quantizer) -> EveStage<'_, 'a> {
        let n = self.ds.len();
        let (mut a, mut b, mut xi) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for s in &self.ds.samples {
            if self.adqc() {
                let (sa, x) = alice_correction(qa, s.x, self.k);
                let raw = qb.quantize(s.y);
                let sb = corrected_decision(qb, s.y, qb.cell(raw).1, x, self.k, &self.opts);
                a.push(sa as u8);
                b.push(sb as u8);
                xi.push(x);
            } else {
                a.push(qa.quantize(s.x) as u8);
                b.push(qb.quantize(s.y) as u8);
            }
        }
        EveStage { ev: self, a, b, xi }
    }

    /// Fixes Eve's quantizer for an Alice–Bob step.
    fn with_eve(&self, qe: &Quantizer) -> AbStage<'_, 'a> {
        let (raw, len) = self
            .ds
            .samples
            .iter()
            .map(|s| {
                let m = qe.quantize(s.z);
                (m as u8, qe.cell(m).1)
            })
            .unzip();
        AbStage { ev: self, qe: qe.clone(), e_raw: raw, e_len: len }
    }
}

/// Flat histograms for the inner loops; converted to a [`Tally`] at the end.
struct PairCounts {
    levels: usize,
    blind: bool,
    hist: [Vec<u64>; 5],
}

impl PairCounts {
    fn new(levels: usize, blind: bool) -> Self {
        let cells = levels * levels;
        let blind_cells = if blind { cells } else { 0 };
        Self {
            levels,
            blind,
            hist: [vec![0; cells], vec![0; cells], vec![0; cells], vec![0; blind_cells], vec![0; blind_cells]],
        }
    }

    #[inline]
    fn add(&mut self, a: usize, b: usize, e: usize, e_blind: usize) {
        let m = self.levels;
        self.hist[0][a * m + b] += 1;
        self.hist[1][a * m + e] += 1;
        self.hist[2][b * m + e] += 1;
        if self.blind {
            self.hist[3][a * m + e_blind] += 1;
            self.hist[4][b * m + e_blind] += 1;
        }
    }

    fn into_tally(self) -> Result<Tally> {
        let m = self.levels;
        let [ab, ae, be, ae_blind, be_blind] = self.hist;
        let ab = JointPmf::from_counts(m, ab)?;
        let total = ab.total();
        Ok(Tally {
            ab,
            ae: JointPmf::from_counts(m, ae)?,
            be: JointPmf::from_counts(m, be)?,
            blind: if self.blind {
                Some((JointPmf::from_counts(m, ae_blind)?, JointPmf::from_counts(m, be_blind)?))
            } else {
                None
            },
            total,
        })
    }
}

struct EveStage<'e, 'a> {
    ev: &'e Evaluator<'a>,
    a: Vec<u8>,
    b: Vec<u8>,
    xi: Vec<u32>,
}

impl EveStage<'_, '_> {
    fn eval(&self, qe: &Quantizer) -> f64 {
        let ev = self.ev;
        let adqc = ev.adqc();
        let mut counts = PairCounts::new(ev.levels, adqc);
        for (i, s) in ev.ds.samples.iter().enumerate() {
            let raw = qe.quantize(s.z);
            let (a, b) = (self.a[i] as usize, self.b[i] as usize);
            if adqc {
                let e = corrected_decision(qe, s.z, qe.cell(raw).1, self.xi[i], ev.k, &ev.opts);
                counts.add(a, b, e, raw);
            } else {
                counts.add(a, b, raw, 0);
            }
        }
        ev.finish(counts)
    }
}

struct AbStage<'e, 'a> {
    ev: &'e Evaluator<'a>,
    qe: Quantizer,
    e_raw: Vec<u8>,
    e_len: Vec<f64>,
}

impl AbStage<'_, '_> {
    fn eval(&self, qa: &Quantizer, qb: &Quantizer) -> f64 {
        let ev = self.ev;
        let adqc = ev.adqc();
        let mut counts = PairCounts::new(ev.levels, adqc);
        for (i, s) in ev.ds.samples.iter().enumerate() {
            if adqc {
                let (a, xi) = alice_correction(qa, s.x, ev.k);
                let raw_b = qb.quantize(s.y);
                let b = corrected_decision(qb, s.y, qb.cell(raw_b).1, xi, ev.k, &ev.opts);
                let e = corrected_decision(&self.qe, s.z, self.e_len[i], xi, ev.k, &ev.opts);
                counts.add(a, b, e, self.e_raw[i] as usize);
            } else {
                counts.add(qa.quantize(s.x), qb.quantize(s.y), self.e_raw[i] as usize, 0);
            }
        }
        ev.finish(counts)
    }
}

/// Result of one half-step search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome<T> {
    pub best: T,
    pub objective: f64,
    pub start_objective: f64,
    pub evaluations: usize,
    /// Budget ran out before the search converged; `best` is still the best
    /// point seen and is never worse than the start.
    pub budget_exhausted: bool,
}

fn search_options(cfg: &OptimizerConfig, salt: u64) -> SimplexOptions {
    SimplexOptions {
        max_evals: cfg.search.budget,
        restarts: cfg.search.restarts,
        initial_step: cfg.search.initial_step,
        x_tolerance: 1e-5,
        seed: mix_seed(cfg.search.seed, salt),
    }
}

/// SplitMix64 finaliser over `seed ^ salt`.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_bits(cfg: &OptimizerConfig, ts: &[&ThresholdVector]) -> Result<()> {
    for t in ts {
        if t.bits() != cfg.scheme.bits {
            return Err(Error::MismatchedSymbolSizes(1 << cfg.scheme.bits, 1 << t.bits()));
        }
        ThresholdVector::new(t.interior.clone(), &cfg.bounds)?;
    }
    Ok(())
}

/// Eve's best response to fixed legitimate quantizers.
pub fn optimize_eve(
    t_a: &ThresholdVector,
    t_b: &ThresholdVector,
    t_e_start: &ThresholdVector,
    ds: &Dataset,
    cfg: &OptimizerConfig,
) -> Result<SearchOutcome<ThresholdVector>> {
    optimize_eve_salted(t_a, t_b, t_e_start, ds, cfg, 0)
}

fn optimize_eve_salted(
    t_a: &ThresholdVector,
    t_b: &ThresholdVector,
    t_e_start: &ThresholdVector,
    ds: &Dataset,
    cfg: &OptimizerConfig,
    salt: u64,
) -> Result<SearchOutcome<ThresholdVector>> {
    cfg.validate()?;
    check_bits(cfg, &[t_a, t_b, t_e_start])?;
    let ev = Evaluator::new(ds, cfg.scheme, cfg.protocol);
    let stage = ev.with_legitimate(&t_a.quantizer(&cfg.bounds), &t_b.quantizer(&cfg.bounds));
    let start = stage.eval(&t_e_start.quantizer(&cfg.bounds));
    let bounds = cfg.bounds;
    let f = |theta: &[f64]| match ThresholdVector::from_search_coords(theta, &bounds) {
        Some(t) => stage.eval(&t.quantizer(&bounds)),
        None => f64::INFINITY,
    };
    let r = simplex::minimize(f, &t_e_start.to_search_coords(), start, &search_options(cfg, salt));
    let best = ThresholdVector::from_search_coords(&r.x, &bounds)
        .filter(|_| r.value < start)
        .unwrap_or_else(|| t_e_start.clone());
    Ok(SearchOutcome {
        objective: r.value.min(start),
        best,
        start_objective: start,
        evaluations: r.evaluations,
        budget_exhausted: r.exhausted,
    })
}

/// Joint Alice–Bob best response to a fixed Eve quantizer.
pub fn optimize_alice_bob(
    t_a_start: &ThresholdVector,
    t_b_start: &ThresholdVector,
    t_e: &ThresholdVector,
    ds: &Dataset,
    cfg: &OptimizerConfig,
) -> Result<SearchOutcome<(ThresholdVector, ThresholdVector)>> {
    optimize_alice_bob_salted(t_a_start, t_b_start, t_e, ds, cfg, 1)
}

fn optimize_alice_bob_salted(
    t_a_start: &ThresholdVector,
    t_b_start: &ThresholdVector,
    t_e: &ThresholdVector,
    ds: &Dataset,
    cfg: &OptimizerConfig,
    salt: u64,
) -> Result<SearchOutcome<(ThresholdVector, ThresholdVector)>> {
    cfg.validate()?;
    check_bits(cfg, &[t_a_start, t_b_start, t_e])?;
    let ev = Evaluator::new(ds, cfg.scheme, cfg.protocol);
    let stage = ev.with_eve(&t_e.quantizer(&cfg.bounds));
    let bounds = cfg.bounds;
    let start = stage.eval(&t_a_start.quantizer(&bounds), &t_b_start.quantizer(&bounds));
    let split = t_a_start.interior.len();
    let decode = |theta: &[f64]| -> Option<(ThresholdVector, ThresholdVector)> {
        Some((
            ThresholdVector::from_search_coords(&theta[..split], &bounds)?,
            ThresholdVector::from_search_coords(&theta[split..], &bounds)?,
        ))
    };
    // maximise by minimising the negated objective
    let f = |theta: &[f64]| match decode(theta) {
        Some((a, b)) => -stage.eval(&a.quantizer(&bounds), &b.quantizer(&bounds)),
        None => f64::INFINITY,
    };
    let mut theta0 = t_a_start.to_search_coords();
    theta0.extend(t_b_start.to_search_coords());
    let r = simplex::minimize(f, &theta0, -start, &search_options(cfg, salt));
    let value = -r.value;
    let best = decode(&r.x)
        .filter(|_| value > start)
        .unwrap_or_else(|| (t_a_start.clone(), t_b_start.clone()));
    Ok(SearchOutcome {
        objective: value.max(start),
        best,
        start_objective: start,
        evaluations: r.evaluations,
        budget_exhausted: r.exhausted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfStep {
    Start,
    Eve,
    AliceBob,
    FinalEve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub outer_iter: usize,
    pub half_step: HalfStep,
    pub objective: f64,
    pub evaluations: usize,
    pub t_a: Vec<f64>,
    pub t_b: Vec<f64>,
    pub t_e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub t_a: ThresholdVector,
    pub t_b: ThresholdVector,
    pub t_e: ThresholdVector,
    pub history: Vec<HistoryEntry>,
    /// Index into `history` of the returned triple: the Eve half-step with
    /// the largest objective, i.e. the legitimate design Eve hurt least.
    pub selected: usize,
    pub converged: bool,
}

impl DesignResult {
    pub fn final_objective(&self) -> f64 {
        self.history.get(self.selected).map_or(f64::NAN, |h| h.objective)
    }

    pub fn quantizers(&self, bounds: &ThresholdBounds) -> (Quantizer, Quantizer, Quantizer) {
        (self.t_a.quantizer(bounds), self.t_b.quantizer(bounds), self.t_e.quantizer(bounds))
    }
}

/// Alternates Eve and Alice–Bob half-steps starting from uniform quantizers
/// on the design dataset `ds`. When `log` is given, one JSON line per
/// half-step is appended to it.
pub fn alternate(
    cfg: &OptimizerConfig,
    ds: &Dataset,
    mut log: Option<&mut dyn Write>,
) -> Result<DesignResult> {
    cfg.validate()?;
    let uniform = ThresholdVector::uniform(cfg.scheme.bits, cfg.uniform_span, &cfg.bounds)?;
    let (mut t_a, mut t_b, mut t_e) = (uniform.clone(), uniform.clone(), uniform);
    let start = objective_with(&t_a, &t_b, &t_e, &cfg.scheme, ds, &cfg.bounds, &cfg.protocol)?;
    let mut history = Vec::new();
    let push = |history: &mut Vec<HistoryEntry>,
                    entry: HistoryEntry,
                    log: &mut Option<&mut dyn Write>|
     -> Result<()> {
        if let Some(out) = log.as_deref_mut() {
            serde_json::to_writer(&mut *out, &entry)?;
            writeln!(out)?;
        }
        history.push(entry);
        Ok(())
    };
    let entry = |iter, step, objective, evaluations, a: &ThresholdVector, b: &ThresholdVector, e: &ThresholdVector| {
        HistoryEntry {
            outer_iter: iter,
            half_step: step,
            objective,
            evaluations,
            t_a: a.interior.clone(),
            t_b: b.interior.clone(),
            t_e: e.interior.clone(),
        }
    };
    push(&mut history, entry(0, HalfStep::Start, start, 1, &t_a, &t_b, &t_e), &mut log)?;

    let mut previous = start;
    let mut converged = false;
    for iter in 1..=cfg.max_outer_iters {
        let salt = 2 * iter as u64;
        let eve = optimize_eve_salted(&t_a, &t_b, &t_e, ds, cfg, salt)?;
        t_e = eve.best;
        push(&mut history, entry(iter, HalfStep::Eve, eve.objective, eve.evaluations, &t_a, &t_b, &t_e), &mut log)?;

        let ab = optimize_alice_bob_salted(&t_a, &t_b, &t_e, ds, cfg, salt + 1)?;
        (t_a, t_b) = ab.best;
        push(
            &mut history,
            entry(iter, HalfStep::AliceBob, ab.objective, ab.evaluations, &t_a, &t_b, &t_e),
            &mut log,
        )?;

        if (ab.objective - previous).abs() < cfg.objective_tolerance {
            converged = true;
            break;
        }
        previous = ab.objective;
    }

    if cfg.final_eve_step {
        let iter = history.last().map_or(0, |h| h.outer_iter);
        let eve = optimize_eve_salted(&t_a, &t_b, &t_e, ds, cfg, u64::MAX)?;
        t_e = eve.best;
        push(
            &mut history,
            entry(iter, HalfStep::FinalEve, eve.objective, eve.evaluations, &t_a, &t_b, &t_e),
            &mut log,
        )?;
    }

    let mut selected = history.len() - 1;
    if cfg.final_eve_step {
        for (i, h) in history.iter().enumerate() {
            if matches!(h.half_step, HalfStep::Eve | HalfStep::FinalEve) && h.objective > history[selected].objective {
                selected = i;
            }
        }
        let h = &history[selected];
        t_a = ThresholdVector { interior: h.t_a.clone() };
        t_b = ThresholdVector { interior: h.t_b.clone() };
        t_e = ThresholdVector { interior: h.t_e.clone() };
    }

    Ok(DesignResult { t_a, t_b, t_e, history, selected, converged })
}
