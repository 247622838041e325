//! Experiment plans and the drivers behind the `adqc` subcommands.
//!
//! A plan is a grid of ρ_AB values times a list of runs. Every grid point
//! draws its own design and evaluation datasets from a seed derived from the
//! base seed and the point's ρ_AB, so results do not depend on scheduling
//! and any row can be regenerated on its own.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metrics::{gamma_cost, report_from_tally, MetricsReport};
use crate::optimizer::{alternate, mix_seed, DesignResult, OptimizerConfig, SearchSettings};
use crate::protocol::{run_scheme, tally_scheme, write_trace, AdqcOptions, SchemeKind, SchemeSpec};
use crate::quantizer::{Quantizer, DEFAULT_T_MAX, DEFAULT_T_MIN};
use crate::source::{sample_dataset, validate_config, CorrelationConfig, Dataset, GENERATOR_NAME};
use crate::{Error, Result};

pub const DEFAULT_GRID: [f64; 16] =
    [0.8, 0.82, 0.84, 0.86, 0.88, 0.9, 0.92, 0.94, 0.96, 0.97, 0.975, 0.98, 0.985, 0.99, 0.995, 0.999];
pub const TABLE_GRID: [f64; 10] = [0.8, 0.84, 0.88, 0.9, 0.92, 0.94, 0.96, 0.98, 0.99, 0.995];
pub const DEFAULT_RHO_EVE: f64 = 0.8;
pub const DEFAULT_GUARD: f64 = 0.85;
pub const DEFAULT_N_DESIGN: usize = 200_000;
pub const DEFAULT_N_EVAL: usize = 1_000_000;
pub const DEFAULT_SEED: u64 = 20_190_101;
pub const MAX_TRACE_SAMPLES: usize = 10_000;
pub const CSV_HEADER: &str = "scheme,b,B,rho_ab,i_ab,i_ae,i_be,c_sk_low,c_ab,beta,gamma,retention,n,seed";

/// How a run obtains its quantizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Uniform thresholds on `[-span, span]`, shared by all three parties.
    Uniform,
    /// Adversarial design on the design dataset.
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub scheme: SchemeSpec,
    pub design: Design,
}

impl Run {
    pub fn nec_uniform(bits: u32) -> Self {
        Self { scheme: SchemeSpec::nec(bits), design: Design::Uniform }
    }

    pub fn nec_optimized(bits: u32) -> Self {
        Self { scheme: SchemeSpec::nec(bits), design: Design::Optimized }
    }

    pub fn adqc_uniform(bits: u32, correction_bits: u32) -> Self {
        Self { scheme: SchemeSpec::adqc(bits, correction_bits), design: Design::Uniform }
    }

    pub fn adqc_optimized(bits: u32, correction_bits: u32) -> Self {
        Self { scheme: SchemeSpec::adqc(bits, correction_bits), design: Design::Optimized }
    }

    pub fn gb(bits: u32, guard_width: f64) -> Self {
        Self { scheme: SchemeSpec::gb(bits, guard_width), design: Design::Uniform }
    }

    /// Series name used in the `scheme` column.
    pub fn label(&self) -> &'static str {
        match (self.scheme.kind, self.design) {
            (SchemeKind::Nec, Design::Uniform) => "NEC-uniform",
            (SchemeKind::Nec, Design::Optimized) => "NEC-opt",
            (SchemeKind::Adqc, Design::Uniform) => "ADQC-uniform",
            (SchemeKind::Adqc, Design::Optimized) => "ADQC-opt",
            (SchemeKind::Gb, _) => "GB",
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.scheme.kind == SchemeKind::Gb && self.design == Design::Optimized {
            return Err(Error::InvalidScheme("GB uses a fixed grid and cannot be optimised".into()));
        }
        Ok(())
    }
}

/// Scheme family as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeName {
    NecUniform,
    NecOptimized,
    AdqcUniform,
    AdqcOptimized,
    Gb,
}

impl FromStr for SchemeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nec" | "nec-uniform" | "nec-unif" => Ok(Self::NecUniform),
            "nec-opt" | "nec-optimized" => Ok(Self::NecOptimized),
            "adqc-uniform" | "adqc-unif" => Ok(Self::AdqcUniform),
            "adqc" | "adqc-opt" | "adqc-optimized" => Ok(Self::AdqcOptimized),
            "gb" => Ok(Self::Gb),
            other => Err(Error::Parse(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Expands scheme names over the bit settings, in the order given: `b`
/// outermost, then scheme, then `B` for ADQC.
pub fn expand_runs(names: &[SchemeName], bits: &[u32], correction_bits: &[u32], guard: f64) -> Vec<Run> {
    let mut runs = Vec::new();
    for &b in bits {
        for name in names {
            match name {
                SchemeName::NecUniform => runs.push(Run::nec_uniform(b)),
                SchemeName::NecOptimized => runs.push(Run::nec_optimized(b)),
                SchemeName::Gb => runs.push(Run::gb(b, guard)),
                SchemeName::AdqcUniform => runs.extend(correction_bits.iter().map(|&cb| Run::adqc_uniform(b, cb))),
                SchemeName::AdqcOptimized => {
                    runs.extend(correction_bits.iter().map(|&cb| Run::adqc_optimized(b, cb)))
                }
            }
        }
    }
    runs
}

/// Parses `start:stop:count` (inclusive, evenly spaced) or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |what: &str| Error::Parse(format!("bad rho grid '{s}': {what}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, stop, count] => {
            let start: f64 = start.trim().parse().map_err(|_| bad("start"))?;
            let stop: f64 = stop.trim().parse().map_err(|_| bad("stop"))?;
            let count: usize = count.trim().parse().map_err(|_| bad("count"))?;
            match count {
                0 => Err(bad("count must be positive")),
                1 => Ok(vec![start]),
                _ => Ok((0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect()),
            }
        }
        [list] => list
            .split(',')
            .filter(|v| !v.trim().is_empty())
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad(v)))
            .collect(),
        _ => Err(bad("expected start:stop:count or a comma list")),
    }
}

/// Optimizer knobs shared by every optimised run of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSettings {
    pub max_outer_iters: usize,
    pub objective_tolerance: f64,
    pub budget: usize,
    pub restarts: usize,
    pub initial_step: f64,
    /// Half-width of the uniform starting (and baseline) quantizers.
    pub uniform_span: f64,
}

impl Default for DesignSettings {
    fn default() -> Self {
        let search = SearchSettings::default();
        Self {
            max_outer_iters: 10,
            objective_tolerance: 1e-3,
            budget: search.budget,
            restarts: search.restarts,
            initial_step: search.initial_step,
            uniform_span: crate::optimizer::DEFAULT_UNIFORM_SPAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub rho_ab: Vec<f64>,
    pub rho_eve: f64,
    pub runs: Vec<Run>,
    pub n_design: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub design: DesignSettings,
}

impl ExperimentPlan {
    pub fn new(rho_ab: Vec<f64>, runs: Vec<Run>) -> Self {
        Self {
            rho_ab,
            rho_eve: DEFAULT_RHO_EVE,
            runs,
            n_design: DEFAULT_N_DESIGN,
            n_eval: DEFAULT_N_EVAL,
            seed: DEFAULT_SEED,
            design: DesignSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::NoSchemes);
        }
        if self.rho_ab.is_empty() {
            return Err(Error::InvalidPlan("empty rho_ab grid".into()));
        }
        for &rho in &self.rho_ab {
            validate_config(&CorrelationConfig::with_eve_at(rho, self.rho_eve))?;
        }
        for run in &self.runs {
            run.validate()?;
        }
        if self.n_eval == 0 || (self.n_design == 0 && self.needs_design()) {
            return Err(Error::EmptyDataset);
        }
        if self.design.max_outer_iters == 0 || self.design.budget == 0 {
            return Err(Error::InvalidPlan("optimizer needs at least one iteration and evaluation".into()));
        }
        if !(self.design.uniform_span > 0.0 && self.design.uniform_span < DEFAULT_T_MAX) {
            return Err(Error::InvalidPlan(format!("uniform span {} outside (0, 6)", self.design.uniform_span)));
        }
        Ok(())
    }

    fn needs_design(&self) -> bool {
        self.runs.iter().any(|r| r.design == Design::Optimized)
    }

    /// SHA-256 of the plan's JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("plan serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn optimizer_config(&self, scheme: SchemeSpec, point_seed: u64) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::new(scheme);
        cfg.max_outer_iters = self.design.max_outer_iters;
        cfg.objective_tolerance = self.design.objective_tolerance;
        cfg.uniform_span = self.design.uniform_span;
        cfg.search = SearchSettings {
            restarts: self.design.restarts,
            budget: self.design.budget,
            initial_step: self.design.initial_step,
            seed: mix_seed(point_seed, 3),
        };
        cfg
    }
}

/// Seed of the grid point at `rho_ab`; the design, evaluation and search
/// seeds are derived from it with salts 1, 2 and 3.
pub fn point_seed(base: u64, rho_ab: f64) -> u64 {
    mix_seed(base, rho_ab.to_bits())
}

/// Both datasets of one grid point.
#[derive(Debug, Clone)]
pub struct PointData {
    pub rho_ab: f64,
    pub seed: u64,
    pub design: Option<Dataset>,
    pub eval: Dataset,
}

impl PointData {
    pub fn generate(plan: &ExperimentPlan, rho_ab: f64) -> Result<Self> {
        let seed = point_seed(plan.seed, rho_ab);
        let cfg = CorrelationConfig::with_eve_at(rho_ab, plan.rho_eve);
        let design = if plan.needs_design() {
            Some(sample_dataset(&cfg, plan.n_design, mix_seed(seed, 1))?)
        } else {
            None
        };
        let eval = sample_dataset(&cfg, plan.n_eval, mix_seed(seed, 2))?;
        Ok(Self { rho_ab, seed, design, eval })
    }
}

pub fn uniform_quantizer(bits: u32, span: f64) -> Result<Quantizer> {
    Quantizer::uniform_in(bits, -span, span, DEFAULT_T_MIN, DEFAULT_T_MAX)
}

/// Quantizers for `run` at one grid point, plus the design trace when the
/// run is optimised.
pub fn design_quantizers(
    plan: &ExperimentPlan,
    run: &Run,
    point: &PointData,
    log: Option<&mut dyn Write>,
) -> Result<([Quantizer; 3], Option<DesignResult>)> {
    match run.design {
        Design::Uniform => {
            let q = uniform_quantizer(run.scheme.bits, plan.design.uniform_span)?;
            Ok(([q.clone(), q.clone(), q], None))
        }
        Design::Optimized => {
            let cfg = plan.optimizer_config(run.scheme, point.seed);
            let ds = point.design.as_ref().ok_or(Error::EmptyDataset)?;
            let result = alternate(&cfg, ds, log)?;
            let (qa, qb, qe) = result.quantizers(&cfg.bounds);
            Ok(([qa, qb, qe], Some(result)))
        }
    }
}

/// Designs (if needed) and evaluates one run at one grid point.
pub fn evaluate_run(plan: &ExperimentPlan, run: &Run, point: &PointData) -> Result<ResultRow> {
    let ([qa, qb, qe], _) = design_quantizers(plan, run, point, None)?;
    let tally = tally_scheme(&run.scheme, &qa, &qb, &qe, &point.eval, &AdqcOptions::default())?;
    let report = report_from_tally(&tally, &run.scheme)?;
    Ok(ResultRow { run: *run, rho_ab: point.rho_ab, report, seed: plan.seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run: Run,
    pub rho_ab: f64,
    pub report: MetricsReport,
    /// Base seed of the plan; the row's datasets follow from it and `rho_ab`.
    pub seed: u64,
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        let r = &self.report;
        let gamma = r.gamma.map(|g| g.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run.label(),
            self.run.scheme.bits,
            self.run.scheme.correction_bits.unwrap_or(0),
            self.rho_ab,
            r.i_ab,
            r.i_ae,
            r.i_be,
            r.c_sk_low,
            r.c_ab,
            r.beta,
            gamma,
            r.retention,
            r.n,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub label: String,
    pub bits: u32,
    pub correction_bits: Option<u32>,
    pub rho_ab: f64,
    pub message: String,
}

impl fmt::Display for PointFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} b={}", self.label, self.bits)?;
        if let Some(cb) = self.correction_bits {
            write!(f, " B={cb}")?;
        }
        write!(f, " rho_ab={}: {}", self.rho_ab, self.message)
    }
}

/// Rows in plan order (runs outermost, then the grid) and the points that
/// failed without stopping the rest.
#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<PointFailure>,
}

impl SweepOutput {
    pub fn find(&self, label: &str, bits: u32, correction_bits: Option<u32>, rho_ab: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| {
            r.run.label() == label
                && r.run.scheme.bits == bits
                && r.run.scheme.correction_bits == correction_bits
                && r.rho_ab == rho_ab
        })
    }

    pub fn write_csv<W: Write>(&self, out: &mut W, plan: &ExperimentPlan, command: &str) -> Result<()> {
        write_csv_header(out, plan, command)?;
        for row in &self.rows {
            writeln!(out, "{}", row.csv_line())?;
        }
        Ok(())
    }
}

/// Line prefix of the only header line that changes between reruns.
pub const TIMESTAMP_PREFIX: &str = "# created_unix = ";

fn write_csv_header<W: Write>(out: &mut W, plan: &ExperimentPlan, command: &str) -> Result<()> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    writeln!(out, "# adqc {command}")?;
    writeln!(out, "# generator = {GENERATOR_NAME}")?;
    writeln!(out, "# seed = {}", plan.seed)?;
    writeln!(
        out,
        "# point seed = splitmix64(seed, bits(rho_ab)); design seed = splitmix64(point, 1); eval seed = splitmix64(point, 2)"
    )?;
    writeln!(out, "# rho_ae = rho_be = {}", plan.rho_eve)?;
    writeln!(out, "# n_design = {}, n_eval = {}", plan.n_design, plan.n_eval)?;
    let d = &plan.design;
    writeln!(
        out,
        "# optimizer: max_outer_iters = {}, objective_tolerance = {}, budget = {}, restarts = {}, initial_step = {}, uniform_span = {}",
        d.max_outer_iters, d.objective_tolerance, d.budget, d.restarts, d.initial_step, d.uniform_span
    )?;
    writeln!(out, "# config_sha256 = {}", plan.config_hash())?;
    writeln!(out, "{TIMESTAMP_PREFIX}{created}")?;
    writeln!(out, "{CSV_HEADER}")?;
    Ok(())
}

fn failure(run: &Run, rho_ab: f64, err: &Error) -> PointFailure {
    PointFailure {
        label: run.label().to_string(),
        bits: run.scheme.bits,
        correction_bits: run.scheme.correction_bits,
        rho_ab,
        message: err.to_string(),
    }
}

/// Evaluates every run at every grid point. Points run in parallel; the
/// output order is fixed by the plan.
pub fn cmd_sweep(plan: &ExperimentPlan) -> Result<SweepOutput> {
    plan.validate()?;
    let per_point: Vec<Vec<std::result::Result<ResultRow, PointFailure>>> = plan
        .rho_ab
        .par_iter()
        .map(|&rho| match PointData::generate(plan, rho) {
            Ok(point) => plan
                .runs
                .par_iter()
                .map(|run| evaluate_run(plan, run, &point).map_err(|e| failure(run, rho, &e)))
                .collect(),
            Err(e) => plan.runs.iter().map(|run| Err(failure(run, rho, &e))).collect(),
        })
        .collect();

    let mut out = SweepOutput::default();
    for r in 0..plan.runs.len() {
        for point in &per_point {
            match &point[r] {
                Ok(row) => out.rows.push(row.clone()),
                Err(f) => out.failures.push(f.clone()),
            }
        }
    }
    Ok(out)
}

/// Table layout: ADQC with optimised quantizers over (b, ρ_AB).
pub fn cmd_table(plan: &ExperimentPlan) -> Result<SweepOutput> {
    if plan.runs.iter().any(|r| r.scheme.kind != SchemeKind::Adqc || r.design != Design::Optimized) {
        return Err(Error::InvalidPlan("the table only covers ADQC with optimised quantizers".into()));
    }
    cmd_sweep(plan)
}

/// Renders table rows as `b` lines by ρ_AB columns of `c_sk_low`.
pub fn format_table(rows: &[ResultRow]) -> String {
    let mut grid: Vec<f64> = Vec::new();
    let mut lines: BTreeMap<(u32, u32), BTreeMap<u64, f64>> = BTreeMap::new();
    for r in rows {
        if !grid.contains(&r.rho_ab) {
            grid.push(r.rho_ab);
        }
        let key = (r.run.scheme.bits, r.run.scheme.correction_bits.unwrap_or(0));
        lines.entry(key).or_default().insert(r.rho_ab.to_bits(), r.report.c_sk_low);
    }
    grid.sort_by(f64::total_cmp);
    let mut s = String::from("b  B ");
    for rho in &grid {
        s += &format!(" {rho:>7}");
    }
    s.push('\n');
    for ((b, cb), values) in &lines {
        s += &format!("{b:<2} {cb:<2}");
        for rho in &grid {
            match values.get(&rho.to_bits()) {
                Some(v) => s += &format!(" {v:>7.3}"),
                None => s += &format!(" {:>7}", "-"),
            }
        }
        s.push('\n');
    }
    s
}

/// Side-channel cost of every ADQC run of the plan against NEC with
/// optimised quantizers at the same `b` and grid point. Output rows are the
/// NEC-opt baselines followed by the ADQC runs with `gamma` filled in.
/// A degenerate denominator is reported as a point failure and the ADQC row
/// is kept with an empty `gamma`.
pub fn cmd_gamma(plan: &ExperimentPlan) -> Result<SweepOutput> {
    if plan.runs.iter().any(|r| r.scheme.kind != SchemeKind::Adqc || r.design != Design::Optimized) {
        return Err(Error::InvalidPlan("gamma compares ADQC with optimised quantizers against NEC".into()));
    }
    let mut bits: Vec<u32> = plan.runs.iter().map(|r| r.scheme.bits).collect();
    bits.sort_unstable();
    bits.dedup();
    let mut full = plan.clone();
    full.runs = bits.iter().map(|&b| Run::nec_optimized(b)).chain(plan.runs.iter().copied()).collect();
    let mut out = cmd_sweep(&full)?;

    let failures = fill_gamma(&mut out.rows);
    out.failures.extend(failures);
    Ok(out)
}

/// Sets `gamma` on every ADQC row from the NEC row at the same `b` and
/// ρ_AB. Returns the rows that could not be costed.
pub fn fill_gamma(rows: &mut [ResultRow]) -> Vec<PointFailure> {
    let nec: BTreeMap<(u32, u64), f64> = rows
        .iter()
        .filter(|r| r.run.scheme.kind == SchemeKind::Nec)
        .map(|r| ((r.run.scheme.bits, r.rho_ab.to_bits()), r.report.c_ab))
        .collect();
    let mut failures = Vec::new();
    for row in rows.iter_mut().filter(|r| r.run.scheme.kind == SchemeKind::Adqc) {
        let Some(&c_ab_nec) = nec.get(&(row.run.scheme.bits, row.rho_ab.to_bits())) else {
            failures.push(failure(&row.run, row.rho_ab, &Error::InvalidPlan("NEC baseline failed".into())));
            continue;
        };
        match gamma_cost(row.report.c_ab, c_ab_nec, row.report.beta) {
            Ok(g) => row.report.gamma = Some(g),
            Err(e) => failures.push(failure(&row.run, row.rho_ab, &e)),
        }
    }
    failures
}

/// Writes the per-sample protocol trace of the plan's first run at its first
/// grid point, using `n_eval` samples.
pub fn cmd_trace<W: Write>(plan: &ExperimentPlan, out: &mut W) -> Result<()> {
    plan.validate()?;
    if plan.n_eval > MAX_TRACE_SAMPLES {
        return Err(Error::InvalidPlan(format!("trace is limited to {MAX_TRACE_SAMPLES} samples")));
    }
    let run = plan.runs[0];
    let point = PointData::generate(plan, plan.rho_ab[0])?;
    let ([qa, qb, qe], _) = design_quantizers(plan, &run, &point, None)?;
    let outcomes = run_scheme(&run.scheme, &qa, &qb, &qe, &point.eval, &AdqcOptions::default())?;
    write_trace(out, &point.eval, &outcomes)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OptimizeOutput {
    pub row: ResultRow,
    pub design: DesignResult,
    pub quantizers: [Quantizer; 3],
}

/// Runs the adversarial design for the plan's first run at its first grid
/// point, streaming the half-step log to `log`, and evaluates the result.
pub fn cmd_optimize(plan: &ExperimentPlan, log: Option<&mut dyn Write>) -> Result<OptimizeOutput> {
    plan.validate()?;
    let run = plan.runs[0];
    if run.design != Design::Optimized {
        return Err(Error::InvalidPlan(format!("{} has nothing to optimise", run.label())));
    }
    let point = PointData::generate(plan, plan.rho_ab[0])?;
    let (quantizers, design) = design_quantizers(plan, &run, &point, log)?;
    let [qa, qb, qe] = &quantizers;
    let tally = tally_scheme(&run.scheme, qa, qb, qe, &point.eval, &AdqcOptions::default())?;
    let report = report_from_tally(&tally, &run.scheme)?;
    Ok(OptimizeOutput {
        row: ResultRow { run, rho_ab: point.rho_ab, report, seed: plan.seed },
        design: design.expect("optimised runs return a design"),
        quantizers,
    })
}

/// Which driver a configuration is resolved for; each has its own defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Sweep,
    Table,
    Gamma,
    Trace,
    Optimize,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sweep => "sweep",
            Command::Table => "table",
            Command::Gamma => "gamma",
            Command::Trace => "trace",
            Command::Optimize => "optimize",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Text(String),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_outer_iters: Option<usize>,
    pub objective_tolerance: Option<f64>,
    pub budget: Option<usize>,
    pub restarts: Option<usize>,
    pub initial_step: Option<f64>,
    pub uniform_span: Option<f64>,
}

/// Partial plan from a config file or command-line flags. Every field is
/// optional; [`PlanConfig::overlay`] lets the later source win.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub rho_ab: Option<GridSpec>,
    pub rho_eve: Option<f64>,
    pub schemes: Option<Vec<String>>,
    pub b: Option<Vec<u32>>,
    #[serde(rename = "B")]
    pub correction_bits: Option<Vec<u32>>,
    pub guard: Option<f64>,
    pub n_design: Option<usize>,
    pub n_eval: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
}

impl PlanConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn overlay(self, top: PlanConfig) -> PlanConfig {
        let o = top.optimizer;
        let base = self.optimizer;
        PlanConfig {
            rho_ab: top.rho_ab.or(self.rho_ab),
            rho_eve: top.rho_eve.or(self.rho_eve),
            schemes: top.schemes.or(self.schemes),
            b: top.b.or(self.b),
            correction_bits: top.correction_bits.or(self.correction_bits),
            guard: top.guard.or(self.guard),
            n_design: top.n_design.or(self.n_design),
            n_eval: top.n_eval.or(self.n_eval),
            seed: top.seed.or(self.seed),
            optimizer: OptimizerSection {
                max_outer_iters: o.max_outer_iters.or(base.max_outer_iters),
                objective_tolerance: o.objective_tolerance.or(base.objective_tolerance),
                budget: o.budget.or(base.budget),
                restarts: o.restarts.or(base.restarts),
                initial_step: o.initial_step.or(base.initial_step),
                uniform_span: o.uniform_span.or(base.uniform_span),
            },
        }
    }

    /// Fills in the command's defaults and builds a validated plan.
    pub fn resolve(&self, command: Command) -> Result<ExperimentPlan> {
        let (grid, names, bits, cbs, n_eval): (Vec<f64>, Vec<SchemeName>, Vec<u32>, Vec<u32>, usize) = match command {
            Command::Sweep => (
                DEFAULT_GRID.to_vec(),
                vec![SchemeName::NecUniform, SchemeName::NecOptimized, SchemeName::AdqcOptimized, SchemeName::Gb],
                vec![3],
                vec![1, 2],
                DEFAULT_N_EVAL,
            ),
            Command::Table => (TABLE_GRID.to_vec(), vec![SchemeName::AdqcOptimized], vec![2, 3, 4], vec![2], DEFAULT_N_EVAL),
            Command::Gamma => {
                (DEFAULT_GRID.to_vec(), vec![SchemeName::AdqcOptimized], vec![2, 3, 4], vec![1, 2], DEFAULT_N_EVAL)
            }
            Command::Trace => (vec![0.9], vec![SchemeName::AdqcUniform], vec![3], vec![2], 10),
            Command::Optimize => (vec![0.96], vec![SchemeName::AdqcOptimized], vec![3], vec![2], DEFAULT_N_EVAL),
        };
        let grid = match &self.rho_ab {
            Some(GridSpec::Text(s)) => parse_grid(s)?,
            Some(GridSpec::List(v)) => v.clone(),
            None => grid,
        };
        let names = match &self.schemes {
            Some(list) => list.iter().map(|s| s.parse()).collect::<Result<Vec<SchemeName>>>()?,
            None => names,
        };
        let runs = expand_runs(
            &names,
            self.b.as_deref().unwrap_or(&bits),
            self.correction_bits.as_deref().unwrap_or(&cbs),
            self.guard.unwrap_or(DEFAULT_GUARD),
        );
        let defaults = DesignSettings::default();
        let o = &self.optimizer;
        let plan = ExperimentPlan {
            rho_ab: grid,
            rho_eve: self.rho_eve.unwrap_or(DEFAULT_RHO_EVE),
            runs,
            n_design: self.n_design.unwrap_or(DEFAULT_N_DESIGN),
            n_eval: self.n_eval.unwrap_or(n_eval),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            design: DesignSettings {
                max_outer_iters: o.max_outer_iters.unwrap_or(defaults.max_outer_iters),
                objective_tolerance: o.objective_tolerance.unwrap_or(defaults.objective_tolerance),
                budget: o.budget.unwrap_or(defaults.budget),
                restarts: o.restarts.unwrap_or(defaults.restarts),
                initial_step: o.initial_step.unwrap_or(defaults.initial_step),
                uniform_span: o.uniform_span.unwrap_or(defaults.uniform_span),
            },
        };
        plan.validate()?;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(runs: Vec<Run>, grid: Vec<f64>) -> ExperimentPlan {
        let mut plan = ExperimentPlan::new(grid, runs);
        plan.n_design = 4000;
        plan.n_eval = 20_000;
        plan.design.max_outer_iters = 1;
        plan.design.budget = 40;
        plan.design.restarts = 0;
        plan
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.8:0.9:3").unwrap(), vec![0.8, 0.8500000000000001, 0.9]);
        assert_eq!(parse_grid("0.8, 0.9").unwrap(), vec![0.8, 0.9]);
        assert_eq!(parse_grid("0.95:1:1").unwrap(), vec![0.95]);
        assert!(parse_grid("0.8:0.9").is_err());
        assert!(parse_grid("a,b").is_err());
        assert!(parse_grid("0.8:0.9:0").is_err());
    }

    #[test]
    fn scheme_names_and_expansion() {
        let names: Vec<SchemeName> = ["nec", "NEC-opt", "adqc", "gb"].iter().map(|s| s.parse().unwrap()).collect();
        let runs = expand_runs(&names, &[3], &[1, 2], 0.85);
        let labels: Vec<_> = runs.iter().map(|r| r.label()).collect();
        assert_eq!(labels, ["NEC-uniform", "NEC-opt", "ADQC-opt", "ADQC-opt", "GB"]);
        assert_eq!(runs[3].scheme.correction_bits, Some(2));
        assert!("lloyd".parse::<SchemeName>().is_err());
    }

    #[test]
    fn empty_scheme_list_rejected() {
        let plan = ExperimentPlan::new(vec![0.9], vec![]);
        assert!(matches!(cmd_sweep(&plan), Err(Error::NoSchemes)));
    }

    #[test]
    fn invalid_grid_point_rejected() {
        let plan = ExperimentPlan::new(vec![0.2], vec![Run::nec_uniform(3)]);
        assert!(matches!(plan.validate(), Err(Error::NotPositiveSemidefinite { .. })));
        let plan = ExperimentPlan::new(vec![1.2], vec![Run::nec_uniform(3)]);
        assert!(plan.validate().unwrap_err().is_validation());
    }

    #[test]
    fn sweep_rows_follow_plan_order() {
        let plan = quick(vec![Run::nec_uniform(2), Run::gb(2, 0.85)], vec![0.95, 0.85, 0.9]);
        let out = cmd_sweep(&plan).unwrap();
        assert!(out.failures.is_empty());
        let keys: Vec<_> = out.rows.iter().map(|r| (r.run.label(), r.rho_ab)).collect();
        assert_eq!(
            keys,
            [("NEC-uniform", 0.95), ("NEC-uniform", 0.85), ("NEC-uniform", 0.9), ("GB", 0.95), ("GB", 0.85), ("GB", 0.9)]
        );
        assert!(out.rows[3].report.retention < 1.0);
    }

    #[test]
    fn row_reproducible_alone() {
        let plan = quick(vec![Run::nec_uniform(3), Run::adqc_optimized(2, 1)], vec![0.85, 0.95]);
        let all = cmd_sweep(&plan).unwrap();
        let single = quick(vec![Run::adqc_optimized(2, 1)], vec![0.95]);
        let one = cmd_sweep(&single).unwrap();
        assert_eq!(Some(&one.rows[0]), all.find("ADQC-opt", 2, Some(1), 0.95));
    }

    #[test]
    fn csv_is_deterministic_apart_from_timestamp() {
        let plan = quick(vec![Run::nec_uniform(2), Run::adqc_optimized(2, 2)], vec![0.9, 0.99]);
        let render = || {
            let mut buf = Vec::new();
            cmd_sweep(&plan).unwrap().write_csv(&mut buf, &plan, "sweep").unwrap();
            String::from_utf8(buf).unwrap()
        };
        let strip = |s: String| s.lines().filter(|l| !l.starts_with(TIMESTAMP_PREFIX)).collect::<Vec<_>>().join("\n");
        let (a, b) = (render(), render());
        assert_eq!(strip(a.clone()), strip(b));
        let header = a.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, CSV_HEADER);
        assert!(a.contains("# config_sha256 = "));
        assert_eq!(a.lines().filter(|l| !l.starts_with('#')).count(), 5);
    }

    #[test]
    fn beta_column_is_exact() {
        let plan = quick(vec![Run::adqc_optimized(3, 1), Run::adqc_optimized(3, 2)], vec![0.9]);
        let out = cmd_gamma(&plan).unwrap();
        for row in &out.rows {
            let cb = row.run.scheme.correction_bits.unwrap_or(0);
            assert_eq!(row.report.beta, cb as f64 / row.run.scheme.bits as f64);
            assert_eq!(row.report.gamma.is_some(), row.run.scheme.kind == SchemeKind::Adqc);
        }
        assert_eq!(out.rows.len(), 3);
        assert_eq!(out.rows[0].run.label(), "NEC-opt");
    }

    #[test]
    fn gamma_requires_optimised_adqc() {
        let plan = quick(vec![Run::nec_uniform(3)], vec![0.9]);
        assert!(cmd_gamma(&plan).is_err());
        assert!(cmd_table(&plan).is_err());
    }

    #[test]
    fn degenerate_gamma_is_a_point_failure() {
        let plan = quick(vec![Run::nec_optimized(2), Run::adqc_optimized(2, 1)], vec![0.9, 0.95]);
        let mut rows = cmd_sweep(&plan).unwrap().rows;
        // NEC agreeing perfectly at the first point leaves no redundancy
        rows[0].report.c_ab = 1.0;
        let failures = fill_gamma(&mut rows);
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].rho_ab, 0.9);
        assert!(failures[0].to_string().contains("degenerate"));
        assert!(rows[2].report.gamma.is_none());
        let g = rows[3].report.gamma.unwrap();
        let expected = (1.0 + 0.5 - rows[3].report.c_ab) / (1.0 - rows[1].report.c_ab);
        assert_eq!(g, expected);
    }

    #[test]
    fn trace_rows() {
        let mut plan = quick(vec![Run::adqc_uniform(3, 2)], vec![0.9]);
        plan.n_eval = 1;
        let mut buf = Vec::new();
        cmd_trace(&plan, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].split(',').all(|f| !f.is_empty()));

        plan.runs = vec![Run::nec_uniform(3)];
        let mut buf = Vec::new();
        cmd_trace(&plan, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap().split(',').nth(6), Some(""));

        plan.n_eval = MAX_TRACE_SAMPLES + 1;
        assert!(cmd_trace(&plan, &mut Vec::new()).is_err());
    }

    #[test]
    fn optimize_logs_every_half_step() {
        let mut plan = quick(vec![Run::nec_optimized(2)], vec![0.95]);
        plan.design.max_outer_iters = 2;
        plan.design.objective_tolerance = 0.0;
        let mut log = Vec::new();
        let out = cmd_optimize(&plan, Some(&mut log)).unwrap();
        let lines = String::from_utf8(log).unwrap().lines().count();
        assert_eq!(lines, out.design.history.len());
        assert_eq!(lines, 6);
        assert!(cmd_optimize(&quick(vec![Run::nec_uniform(2)], vec![0.95]), None).is_err());
    }

    #[test]
    fn config_overlay_and_defaults() {
        let file = PlanConfig::from_toml(
            "rho_ab = \"0.8:0.9:2\"\nschemes = [\"nec\", \"adqc\"]\nB = [1]\nseed = 7\n[optimizer]\nbudget = 50\n",
        )
        .unwrap();
        let flags = PlanConfig { seed: Some(9), b: Some(vec![2]), ..Default::default() };
        let plan = file.overlay(flags).resolve(Command::Sweep).unwrap();
        assert_eq!(plan.rho_ab, vec![0.8, 0.9]);
        assert_eq!(plan.seed, 9);
        assert_eq!(plan.design.budget, 50);
        assert_eq!(plan.runs, vec![Run::nec_uniform(2), Run::adqc_optimized(2, 1)]);

        let table = PlanConfig::default().resolve(Command::Table).unwrap();
        assert_eq!(table.rho_ab, TABLE_GRID.to_vec());
        assert_eq!(table.runs.len(), 3);
        let sweep = PlanConfig::default().resolve(Command::Sweep).unwrap();
        assert_eq!(sweep.rho_ab.len(), 16);
        assert_eq!(sweep.runs.len(), 5);

        assert!(PlanConfig::from_toml("colour = 3").is_err());
        let list = PlanConfig::from_toml("rho_ab = [0.85, 0.95]").unwrap();
        assert_eq!(list.resolve(Command::Sweep).unwrap().rho_ab, vec![0.85, 0.95]);
    }

    #[test]
    fn hash_tracks_plan() {
        let a = quick(vec![Run::nec_uniform(3)], vec![0.9]);
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed += 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }
}
