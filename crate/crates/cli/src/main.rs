use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adqc_core::experiment::{
    cmd_gamma, cmd_optimize, cmd_sweep, cmd_table, cmd_trace, format_table, Command, ExperimentPlan, GridSpec,
    OptimizerSection, PlanConfig, SweepOutput,
};
use adqc_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adqc", version, about = "Secret-key agreement experiments with quantization correction")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// C_sk lower bound of each scheme across the rho_ab grid
    Sweep(Common),
    /// ADQC with optimised quantizers over b and rho_ab
    Table(Common),
    /// Side-channel cost of ADQC relative to optimised NEC
    Gamma(Common),
    /// Per-sample protocol trace (n_eval samples, at most 10^4)
    Trace(Common),
    /// Adversarial quantizer design at a single point
    Optimize(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// rho_ab grid as start:stop:count or a comma list
    #[arg(long = "rho-ab")]
    rho_ab: Option<String>,
    /// Bits per symbol (comma list)
    #[arg(long = "b", value_delimiter = ',')]
    bits: Option<Vec<u32>>,
    /// ADQC correction bits (comma list)
    #[arg(long = "B", value_delimiter = ',')]
    correction_bits: Option<Vec<u32>>,
    /// nec, nec-opt, adqc, adqc-uniform, gb (comma list)
    #[arg(long = "scheme", value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Total guard width around each GB threshold
    #[arg(long)]
    guard: Option<f64>,
    #[arg(long = "rho-eve")]
    rho_eve: Option<f64>,
    #[arg(long = "n-design")]
    n_design: Option<usize>,
    #[arg(long = "n-eval")]
    n_eval: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Objective evaluations per optimizer half-step
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long = "max-outer-iters")]
    max_outer_iters: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Output file (a directory for `optimize`); stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML config; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn flags(&self) -> PlanConfig {
        PlanConfig {
            rho_ab: self.rho_ab.clone().map(GridSpec::Text),
            rho_eve: self.rho_eve,
            schemes: self.schemes.clone(),
            b: self.bits.clone(),
            correction_bits: self.correction_bits.clone(),
            guard: self.guard,
            n_design: self.n_design,
            n_eval: self.n_eval,
            seed: self.seed,
            optimizer: OptimizerSection {
                max_outer_iters: self.max_outer_iters,
                budget: self.budget,
                restarts: self.restarts,
                ..Default::default()
            },
        }
    }

    fn plan(&self, command: Command) -> Result<ExperimentPlan, Error> {
        let base = match &self.config {
            Some(path) => PlanConfig::from_toml(&fs::read_to_string(path)?)?,
            None => PlanConfig::default(),
        };
        base.overlay(self.flags()).resolve(command)
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

enum Outcome {
    Done,
    Partial,
}

fn write_results(out: &SweepOutput, plan: &ExperimentPlan, name: &str, path: Option<&Path>) -> Result<Outcome, Error> {
    let mut w = output(path)?;
    out.write_csv(&mut w, plan, name)?;
    w.flush()?;
    if out.failures.is_empty() {
        return Ok(Outcome::Done);
    }
    for f in &out.failures {
        eprintln!("failed: {f}");
    }
    Ok(Outcome::Partial)
}

fn run(cmd: Cmd) -> Result<Outcome, Error> {
    match cmd {
        Cmd::Sweep(c) => {
            let plan = c.plan(Command::Sweep)?;
            write_results(&cmd_sweep(&plan)?, &plan, "sweep", c.out.as_deref())
        }
        Cmd::Table(c) => {
            let plan = c.plan(Command::Table)?;
            let out = cmd_table(&plan)?;
            let table = format_table(&out.rows);
            if c.out.is_some() {
                print!("{table}");
            } else {
                eprint!("{table}");
            }
            write_results(&out, &plan, "table", c.out.as_deref())
        }
        Cmd::Gamma(c) => {
            let plan = c.plan(Command::Gamma)?;
            write_results(&cmd_gamma(&plan)?, &plan, "gamma", c.out.as_deref())
        }
        Cmd::Trace(c) => {
            let plan = c.plan(Command::Trace)?;
            let mut w = output(c.out.as_deref())?;
            cmd_trace(&plan, &mut w)?;
            w.flush()?;
            Ok(Outcome::Done)
        }
        Cmd::Optimize(c) => {
            let plan = c.plan(Command::Optimize)?;
            match &c.out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    let mut log = BufWriter::new(File::create(dir.join("log.jsonl"))?);
                    let result = cmd_optimize(&plan, Some(&mut log))?;
                    log.flush()?;
                    for (q, party) in result.quantizers.iter().zip(["a", "b", "e"]) {
                        fs::write(dir.join(format!("quantizer_{party}.toml")), q.to_record())?;
                    }
                    let out = SweepOutput { rows: vec![result.row], failures: vec![] };
                    write_results(&out, &plan, "optimize", Some(&dir.join("result.csv")))
                }
                None => {
                    let mut log = io::stderr().lock();
                    let result = cmd_optimize(&plan, Some(&mut log))?;
                    let out = SweepOutput { rows: vec![result.row], failures: vec![] };
                    write_results(&out, &plan, "optimize", None)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
