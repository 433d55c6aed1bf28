//! Command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::async_admm::{run_async, DelayModel};
use crate::centralized::solve_centralized;
use crate::error::{Error, Result};
use crate::metrics::{compare, ComparisonReport};
use crate::model::{HyperParams, Scenario, SystemSolution};
use crate::scenario::{baseline_schedule, generate, GenConfig};
use crate::sync_admm::run_sync;
use crate::trace::ConvergenceTrace;

pub const SCENARIO_FILE: &str = "scenario.json";
pub const BASELINE_FILE: &str = "baseline.json";
pub const CENTRAL_FILE: &str = "central.json";
pub const SYNC_FILE: &str = "sync.json";
pub const ASYNC_FILE: &str = "async.json";
pub const SYNC_TRACE_FILE: &str = "sync_trace.csv";
pub const ASYNC_TRACE_FILE: &str = "async_trace.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Parser)]
#[command(
    name = "peakramp",
    version,
    about = "Peak-ramp minimization for prosumer fleets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario and write it as JSON to `--out`.
    Generate(Overrides),
    /// Solve the epigraph LP and write `central.json` into `--out`.
    SolveCentral(Overrides),
    /// Run synchronous ADMM; writes `sync.json` and `sync_trace.csv`.
    SolveSync(Overrides),
    /// Run asynchronous ADMM; writes `async.json` and `async_trace.csv`.
    SolveAsync(Overrides),
    /// Run all solvers on a scenario and write the comparison report.
    Compare(Overrides),
    /// Generate a scenario, run every solver and write every artifact.
    All(Overrides),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Scenario generator seed (`generate`, `all`) or delay seed otherwise.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Absolute stopping tolerance of both ADMM variants.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub max_events: Option<usize>,
    /// Output file for `generate`, output directory otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scenario to read; required by the solve and compare commands.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, h: &mut HyperParams) {
        if let Some(v) = self.rho {
            h.rho = v;
        }
        if let Some(v) = self.gamma {
            h.gamma = v;
        }
        if let Some(v) = self.eta {
            h.eta = v;
        }
        if let Some(v) = self.tol {
            h.eps_abs = v;
            h.async_tol = v;
        }
        if let Some(v) = self.max_iter {
            h.max_iter = v;
        }
        if let Some(v) = self.max_events {
            h.max_events = v;
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    fn load_scenario(&self) -> Result<Scenario> {
        let path = self
            .scenario
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("--scenario is required".into()))?;
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut sc: Scenario = serde_json::from_str(&text)?;
        if let Some(seed) = self.seed {
            sc.hyper.seed = seed;
        }
        self.apply(&mut sc.hyper);
        sc.validate()?;
        Ok(sc)
    }

    fn generate(&self) -> Result<Scenario> {
        let mut cfg = GenConfig::default();
        if let Some(seed) = self.seed {
            cfg.rng_seed = seed;
        }
        let mut sc = generate(&cfg)?;
        self.apply(&mut sc.hyper);
        sc.validate()?;
        Ok(sc)
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

#[derive(Serialize)]
struct SolutionFile<'a> {
    objective: f64,
    converged: bool,
    #[serde(flatten)]
    solution: &'a SystemSolution,
}

fn solution_json(solution: &SystemSolution, objective: f64, converged: bool) -> Result<String> {
    to_json(&SolutionFile {
        objective,
        converged,
        solution,
    })
}

/// Runs every solver on `sc`, writes their artifacts into `dir` and returns
/// the consolidated report.
pub fn run_all(sc: &Scenario, dir: &Path) -> Result<ComparisonReport> {
    let baseline = baseline_schedule(sc)?;
    let central = solve_centralized(sc)?;
    let sync = run_sync(sc)?;
    let asynch = run_async(sc, &DelayModel::from_hyper(&sc.hyper, sc.len()))?;

    write(
        dir,
        BASELINE_FILE,
        &solution_json(&baseline, baseline.peak_ramp, true)?,
    )?;
    write(
        dir,
        CENTRAL_FILE,
        &solution_json(&central.solution, central.objective, true)?,
    )?;
    write(
        dir,
        SYNC_FILE,
        &solution_json(&sync.solution, sync.solution.peak_ramp, sync.converged)?,
    )?;
    write(
        dir,
        ASYNC_FILE,
        &solution_json(
            &asynch.solution,
            asynch.solution.peak_ramp,
            asynch.converged,
        )?,
    )?;
    write(dir, SYNC_TRACE_FILE, &sync.trace.to_csv())?;
    write(dir, ASYNC_TRACE_FILE, &asynch.trace.to_csv())?;

    let traces: [(&str, &ConvergenceTrace); 2] = [("sync", &sync.trace), ("async", &asynch.trace)];
    let report = compare(&baseline, &central.solution, central.objective, &traces)?;
    write(dir, REPORT_FILE, &to_json(&report)?)?;
    Ok(report)
}

fn print_report(r: &ComparisonReport) {
    println!(
        "peak ramp: baseline {:.6}, optimized {:.6} (reduction {:.1}%)",
        r.baseline_peak_ramp,
        r.optimized_peak_ramp,
        100.0 * r.reduction_fraction
    );
    for a in &r.algorithms {
        let hit = a
            .iterations_to_tolerance
            .map_or_else(|| "not reached".to_string(), |k| k.to_string());
        println!(
            "{}: {} steps, final {:.6}, within 1% at {}",
            a.name, a.steps, a.final_objective, hit
        );
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Generate(o) => {
            let sc = o.generate()?;
            let json = to_json(&sc)?;
            match &o.out {
                Some(path) => {
                    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                        fs::create_dir_all(parent)?;
                    }
                    fs::write(path, json)?;
                }
                None => print!("{json}"),
            }
        }
        Command::SolveCentral(o) => {
            let sc = o.load_scenario()?;
            let central = solve_centralized(&sc)?;
            write(
                &o.out_dir(),
                CENTRAL_FILE,
                &solution_json(&central.solution, central.objective, true)?,
            )?;
            println!("centralized peak ramp {:.6}", central.objective);
        }
        Command::SolveSync(o) => {
            let sc = o.load_scenario()?;
            let run = run_sync(&sc)?;
            let dir = o.out_dir();
            write(
                &dir,
                SYNC_FILE,
                &solution_json(&run.solution, run.solution.peak_ramp, run.converged)?,
            )?;
            write(&dir, SYNC_TRACE_FILE, &run.trace.to_csv())?;
            println!(
                "sync peak ramp {:.6} after {} iterations (converged: {})",
                run.solution.peak_ramp,
                run.trace.len(),
                run.converged
            );
        }
        Command::SolveAsync(o) => {
            let sc = o.load_scenario()?;
            let run = run_async(&sc, &DelayModel::from_hyper(&sc.hyper, sc.len()))?;
            let dir = o.out_dir();
            write(
                &dir,
                ASYNC_FILE,
                &solution_json(&run.solution, run.solution.peak_ramp, run.converged)?,
            )?;
            write(&dir, ASYNC_TRACE_FILE, &run.trace.to_csv())?;
            println!(
                "async peak ramp {:.6} after {} events (converged: {})",
                run.solution.peak_ramp,
                run.trace.len(),
                run.converged
            );
        }
        Command::Compare(o) => {
            let sc = o.load_scenario()?;
            print_report(&run_all(&sc, &o.out_dir())?);
        }
        Command::All(o) => {
            let sc = o.generate()?;
            let dir = o.out_dir();
            write(&dir, SCENARIO_FILE, &to_json(&sc)?)?;
            print_report(&run_all(&sc, &dir)?);
        }
    }
    Ok(())
}

/// 0 on success, 1 on solver failure, 2 on invalid input.
pub fn exit_code(result: &Result<()>) -> u8 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_invalid_input() => 2,
        Err(_) => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = execute(&cli.command);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    ExitCode::from(exit_code(&result))
}
