//! Command-line entry points.
//!
//! Exit codes: 0 when every enabled check passes, 1 for usage, configuration
//! or I/O errors, 2 when a run finishes but a scientific check fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::config::{EvolutionConfig, RunConfig};
use crate::diagnostics::{steady_report, AprioriConstants, SteadyReport};
use crate::evolution::{delta_continuation, Problem, StopReason, SteadyFamily};
use crate::exec::{with_env_pool, Execution};
use crate::grid::{Grid, GridConfig};
use crate::io::{distribution_csv, trajectory_rows, write_atomic, write_json, TRAJECTORY_HEADER};
use crate::kernels::{verify_hypotheses, HypothesisReport};
use crate::verify::{run_suite, Suite};

/// Samples for the kernel hypothesis check attached to every run.
const HYPOTHESIS_SAMPLES: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "coagstat", version, about = "Stationary solutions of coagulation equations with a source")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one configuration and write distribution, trajectory and report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to "output" in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve along the δ ladder and write every stage under family/.
    Continue {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the seeded self-checks and write verify.json.
    Verify {
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Inequalities,
    Operator,
    Bounds,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Suite {
        match s {
            SuiteArg::Inequalities => Suite::Inequalities,
            SuiteArg::Operator => Suite::Operator,
            SuiteArg::Bounds => Suite::Bounds,
            SuiteArg::All => Suite::All,
        }
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match with_env_pool(|| execute(&cli.command)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// `Ok(pass)` when the command ran to completion.
pub fn execute(command: &Command) -> anyhow::Result<bool> {
    match command {
        Command::Run { config, out } => {
            let cfg = RunConfig::load(config)?;
            let out = output_dir(out, &cfg)?;
            cmd_run(&cfg, &out)
        }
        Command::Continue { config, out } => {
            let cfg = RunConfig::load(config)?;
            let out = output_dir(out, &cfg)?;
            cmd_continue(&cfg, &out)
        }
        Command::Verify { suite, seed, out } => cmd_verify((*suite).into(), *seed, out),
    }
}

fn output_dir(arg: &Option<PathBuf>, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = arg
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| anyhow!("no output directory: pass --out or set \"output\" in the config"))?;
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

#[derive(Debug, Serialize)]
struct StageSummary {
    delta: f64,
    converged: bool,
    stop: StopReason,
    steps: usize,
    residual: f64,
    t_end: f64,
    #[serde(rename = "M0")]
    m0: f64,
    #[serde(rename = "Mlambda")]
    m_lambda: f64,
    #[serde(rename = "M1")]
    m1: f64,
    #[serde(rename = "M1plambda")]
    m1_lambda: f64,
    pass: bool,
}

struct Solved {
    grid: Grid,
    family: SteadyFamily,
    reports: Vec<SteadyReport>,
    hypotheses: HypothesisReport,
}

impl Solved {
    /// The sandwiches are statements about small δ, so the verdict rests on
    /// the last stage; earlier stages keep their own flags in the report.
    fn pass(&self) -> bool {
        self.family.complete
            && !self.family.blown_up
            && self.hypotheses.pass()
            && self.reports.last().is_some_and(|r| r.pass)
    }

    fn summaries(&self) -> Vec<StageSummary> {
        self.family
            .stages
            .iter()
            .zip(&self.reports)
            .map(|(s, r)| {
                let last = s.run.trajectory.points.last();
                StageSummary {
                    delta: s.delta,
                    converged: s.run.converged,
                    stop: s.run.stop,
                    steps: s.run.steps,
                    residual: s.run.residual,
                    t_end: last.map_or(0.0, |p| p.t),
                    m0: last.map_or(0.0, |p| p.m0),
                    m_lambda: last.map_or(0.0, |p| p.m_lambda),
                    m1: last.map_or(0.0, |p| p.m1),
                    m1_lambda: last.map_or(0.0, |p| p.m1_lambda),
                    pass: r.pass,
                }
            })
            .collect()
    }
}

fn solve(cfg: &RunConfig) -> anyhow::Result<Solved> {
    let grid = cfg.grid.build()?;
    let mut problem = Problem::new(&cfg.kernel, &grid, cfg.source);
    problem.extra_orders = cfg.diagnostics.moments.clone();
    let family = delta_continuation(&cfg.deltas, &cfg.params, &problem)?;
    let reports = family
        .stages
        .iter()
        .map(|s| steady_report(&cfg.kernel, &problem, &s.run, s.delta, cfg.params.steady_tol, &cfg.diagnostics))
        .collect::<crate::Result<Vec<_>>>()?;
    let hypotheses = verify_hypotheses(&cfg.kernel, HYPOTHESIS_SAMPLES, cfg.seed)?;
    Ok(Solved { grid, family, reports, hypotheses })
}

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    kernel: &'a Value,
    source: &'a Value,
    grid: GridConfig,
    evolution: &'a EvolutionConfig,
    seed: u64,
    lambda: f64,
    complete: bool,
    blown_up: bool,
    hypotheses: &'a HypothesisReport,
    stages: Vec<StageSummary>,
    /// Diagnostics of the stage the report describes.
    #[serde(flatten)]
    steady: &'a SteadyReport,
    pass: bool,
}

/// Report for the stage `upto` and its history.
fn run_report<'a>(cfg: &'a RunConfig, solved: &'a Solved, upto: usize) -> RunReport<'a> {
    let last = upto + 1 == solved.family.stages.len();
    let steady = &solved.reports[upto];
    let pass = if last { solved.pass() } else { steady.pass && solved.hypotheses.pass() };
    RunReport {
        kernel: &cfg.kernel_json,
        source: &cfg.source_json,
        grid: cfg.grid,
        evolution: &cfg.evolution,
        seed: cfg.seed,
        lambda: cfg.kernel.moment_degree(),
        complete: solved.family.complete,
        blown_up: solved.family.blown_up,
        hypotheses: &solved.hypotheses,
        stages: solved.summaries().into_iter().take(upto + 1).collect(),
        steady,
        pass,
    }
}

pub fn cmd_run(cfg: &RunConfig, out: &Path) -> anyhow::Result<bool> {
    let solved = solve(cfg)?;
    let stage = solved.family.last().ok_or_else(|| anyhow!("continuation produced no stage"))?;
    write_atomic(&out.join("distribution.csv"), distribution_csv(&solved.grid, &stage.run.phi).as_bytes())?;
    // the stages are chained in time, each warm-started from the last
    let mut traj = String::from(TRAJECTORY_HEADER);
    let mut offset = 0.0;
    for s in &solved.family.stages {
        trajectory_rows(&mut traj, &s.run.trajectory, offset);
        offset += s.run.trajectory.points.last().map_or(0.0, |p| p.t);
    }
    write_atomic(&out.join("trajectory.csv"), traj.as_bytes())?;
    let report = run_report(cfg, &solved, solved.family.stages.len() - 1);
    write_json(&out.join("report.json"), &report)?;
    Ok(report.pass)
}

#[derive(Debug, Serialize)]
struct FamilyEntry {
    #[serde(flatten)]
    summary: StageSummary,
    dir: String,
    /// Whether `C4 ≤ M_λ ≤ C1` holds for this stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    within_bounds: Option<bool>,
}

#[derive(Debug, Serialize)]
struct ContinuationReport<'a> {
    kernel: &'a Value,
    source: &'a Value,
    grid: GridConfig,
    seed: u64,
    lambda: f64,
    constants: Option<AprioriConstants>,
    entries: Vec<FamilyEntry>,
    /// `M_λ` of each stage over that of the previous one.
    mlambda_ratios: Vec<f64>,
    m0_ratios: Vec<f64>,
    complete: bool,
    blown_up: bool,
    hypotheses: &'a HypothesisReport,
    pass: bool,
}

pub fn cmd_continue(cfg: &RunConfig, out: &Path) -> anyhow::Result<bool> {
    let solved = solve(cfg)?;
    let constants = crate::diagnostics::apriori_bounds(&cfg.kernel, &cfg.source).ok();
    let family_dir = out.join("family");
    fs::create_dir_all(&family_dir).with_context(|| format!("cannot create {}", family_dir.display()))?;
    let mut entries = Vec::new();
    for ((i, stage), summary) in solved.family.stages.iter().enumerate().zip(solved.summaries()) {
        let name = format!("delta_{i:02}");
        let dir = family_dir.join(&name);
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write_atomic(&dir.join("distribution.csv"), distribution_csv(&solved.grid, &stage.run.phi).as_bytes())?;
        let mut traj = String::from(TRAJECTORY_HEADER);
        trajectory_rows(&mut traj, &stage.run.trajectory, 0.0);
        write_atomic(&dir.join("trajectory.csv"), traj.as_bytes())?;
        write_json(&dir.join("report.json"), &run_report(cfg, &solved, i))?;
        let within_bounds = constants.and_then(|c| {
            let ml = summary.m_lambda;
            c.c1.map(|c1| ml >= c.c4 && ml <= c1)
        });
        entries.push(FamilyEntry { summary, dir: format!("family/{name}"), within_bounds });
    }
    let ratios = |f: fn(&StageSummary) -> f64| -> Vec<f64> {
        entries.windows(2).map(|w| f(&w[1].summary) / f(&w[0].summary)).collect()
    };
    let mlambda_ratios = ratios(|s| s.m_lambda);
    let m0_ratios = ratios(|s| s.m0);
    let pass = solved.pass();
    let report = ContinuationReport {
        kernel: &cfg.kernel_json,
        source: &cfg.source_json,
        grid: cfg.grid,
        seed: cfg.seed,
        lambda: cfg.kernel.moment_degree(),
        constants,
        entries,
        mlambda_ratios,
        m0_ratios,
        complete: solved.family.complete,
        blown_up: solved.family.blown_up,
        hypotheses: &solved.hypotheses,
        pass,
    };
    write_json(&out.join("continuation.json"), &report)?;
    Ok(pass)
}

pub fn cmd_verify(suite: Suite, seed: u64, out: &Path) -> anyhow::Result<bool> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let report = run_suite(suite, seed, Execution::Parallel)?;
    write_json(&out.join("verify.json"), &report)?;
    Ok(report.pass)
}
