//! Command-line entry points: `solve`, `simulate`, `plan`, `check`,
//! `export`.
//!
//! Exit codes: 0 ok, 1 check failure, 2 input error, 3 resource cap,
//! 64 usage. Every command is deterministic given its flags and seed; the
//! CSV outputs of reruns are byte-identical (the manifest's wall-clock
//! timings are the one run-dependent output).

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::io::{
    self, plan_summary_line, trajectory_csv, ExportOptions, IoError,
};
use crate::lattice::MemoryState;
use crate::oracle::{check_dpp, check_equivalence, sample_probes, CoarseInstance, OracleError};
use crate::scenario::{parse_scenario, Scenario, ScenarioError};
use crate::sim::{simulate_auto, ControlSignal};
use crate::solver::{
    obstacle_psi, solve_all_with, SolveError, SolveParams, SpaceTimeGrid,
};
use crate::synthesis::{synthesize_trajectory, verify_plan, SynthesisError, SynthesisParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser)]
#[command(
    name = "optvisit",
    version,
    about = "Optimal visiting solver: value-function cascade, trajectory synthesis, brute-force checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for the solver (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for reproducible probe sampling (used by `check`).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the value-function family and export the fields as CSV.
    Solve(SolveArgs),
    /// Simulate the automatic-memory hybrid system under a control signal.
    Simulate(SimulateArgs),
    /// Synthesize a feedback visiting plan from solved fields.
    Plan(PlanArgs),
    /// Check structural properties of solved fields against the oracle.
    Check(CheckArgs),
    /// Re-emit the canonicalized scenario document.
    Export(ExportArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Scenario configuration document (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Grid nodes per spatial dimension.
    #[arg(long, default_value_t = 41)]
    nx: usize,
    /// Time steps.
    #[arg(long, default_value_t = 50)]
    nt: usize,
    /// Output directory for manifest and field CSVs.
    #[arg(long)]
    out: PathBuf,
    /// Export only these time-slice indices (comma-separated). Partial
    /// stores cannot feed `plan`/`check`.
    #[arg(long, value_delimiter = ',')]
    slices: Option<Vec<usize>>,
    /// Also render an SVG heatmap per (state, slice); 2D scenarios only.
    #[arg(long)]
    svg: bool,
    /// Field-storage cap in MiB.
    #[arg(long, default_value_t = 2048)]
    mem_cap_mb: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Initial position, comma-separated.
    #[arg(long)]
    x0: String,
    /// Initial time.
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    /// Initial memory state as a bit string (default: nothing visited).
    #[arg(long)]
    p0: Option<String>,
    /// Control CSV (`time,a_1,..`); omitted means the zero control.
    #[arg(long)]
    control: Option<PathBuf>,
    /// Sample spacing for the default zero control.
    #[arg(long)]
    dt_sim: Option<f64>,
    /// Write the trajectory CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Directory produced by `solve`.
    #[arg(long)]
    fields: PathBuf,
    #[arg(long)]
    x0: String,
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    #[arg(long)]
    p0: Option<String>,
    /// Contact-detection tolerance override.
    #[arg(long)]
    stop_tol: Option<f64>,
    /// Rollout step override.
    #[arg(long)]
    dt_sim: Option<f64>,
    /// Write the plan CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, PartialEq)]
enum CheckMode {
    /// Nodewise obstacle bound and the zero final field.
    Obstacle,
    /// Sampled dynamic programming inequality along simulated controls.
    Dpp,
    /// Brute force vs cascade vs solver on a coarse instance.
    Equivalence,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    fields: PathBuf,
    #[arg(long, value_enum)]
    mode: CheckMode,
    /// Sample / probe count.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Violation tolerance (defaults: obstacle 1e-12, dpp 3(dx+dt),
    /// equivalence 0.1 on solver-vs-oracle).
    #[arg(long)]
    tol: Option<f64>,
    /// Tolerance on |brute force - cascade| in equivalence mode.
    #[arg(long, default_value_t = 1e-9)]
    tol_pair: f64,
    /// Oracle time steps in equivalence mode.
    #[arg(long, default_value_t = 8)]
    oracle_steps: usize,
    /// Enumeration budget cap in equivalence mode.
    #[arg(long, default_value_t = 100_000_000)]
    budget: u64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Write the canonical document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A command failure carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::input(e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::input(e.to_string())
    }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        let code = match e {
            SolveError::ResourceCap { .. } => EXIT_RESOURCE,
            SolveError::OrderingViolation { .. } => EXIT_INPUT,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        Failure::input(e.to_string())
    }
}

impl From<SynthesisError> for Failure {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Solve(inner) => inner.into(),
            other => Failure::input(other.to_string()),
        }
    }
}

/// Parses argv and runs; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Same as [`run`] with explicit arguments, for tests.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // Ignore failure: the pool can only be initialized once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args, cli.threads),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Check(args) => cmd_check(args, cli.seed),
        Command::Export(args) => cmd_export(args),
    };
    match result {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

fn load_scenario(path: &PathBuf) -> Result<Scenario, Failure> {
    let text = io::read_scenario_file(path)?;
    Ok(parse_scenario(&text)?)
}

fn parse_point(text: &str, dim: usize) -> Result<Vec<f64>, Failure> {
    let parts: Result<Vec<f64>, _> = text.split(',').map(|c| c.trim().parse::<f64>()).collect();
    let point = parts.map_err(|_| Failure::input(format!("bad point '{text}'")))?;
    if point.len() != dim {
        return Err(Failure::input(format!(
            "point '{text}' has {} components, scenario dimension is {dim}",
            point.len()
        )));
    }
    Ok(point)
}

fn parse_state(text: Option<&String>, n_targets: usize) -> Result<MemoryState, Failure> {
    match text {
        None => Ok(MemoryState::empty(n_targets)),
        Some(s) => {
            let p = MemoryState::parse(s).map_err(Failure::input)?;
            if p.target_count() != n_targets {
                return Err(Failure::input(format!(
                    "memory state '{s}' has {} bits, scenario has {n_targets} targets",
                    p.target_count()
                )));
            }
            Ok(p)
        }
    }
}

fn cmd_solve(args: SolveArgs, threads: Option<usize>) -> Result<i32, Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let grid = SpaceTimeGrid::uniform(&scenario, args.nx, args.nt);
    if args.svg && scenario.dim != 2 {
        return Err(Failure::input("--svg requires a 2D scenario"));
    }
    let params = SolveParams { memory_cap_bytes: args.mem_cap_mb * 1024 * 1024 };
    let art = solve_all_with(&scenario, grid, &params)?;
    let options = ExportOptions { slices: args.slices, svg: args.svg, threads };
    let manifest = io::save_artifacts(&art, &scenario, &args.out, &options)?;
    println!(
        "solved {} fields on {:?} x {} steps -> {}",
        manifest.fields.len(),
        manifest.grid.nodes_per_dim,
        manifest.grid.steps,
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32, Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let x0 = parse_point(&args.x0, scenario.dim)?;
    let p0 = parse_state(args.p0.as_ref(), scenario.n_targets())?;
    if args.t0 < 0.0 || args.t0 > scenario.horizon {
        return Err(Failure::input(format!(
            "t0 {} outside [0, {}]",
            args.t0, scenario.horizon
        )));
    }

    let alpha = match &args.control {
        Some(path) => {
            let text = io::read_scenario_file(path)?;
            io::parse_control_csv(&text, path, scenario.dim, scenario.horizon)?
        }
        None => {
            let dt = args.dt_sim.unwrap_or(scenario.horizon / 1000.0);
            ControlSignal::constant(vec![0.0; scenario.dim], args.t0, dt, scenario.horizon)
        }
    };
    alpha
        .validate_in_set(&scenario)
        .map_err(|e| Failure::input(e.to_string()))?;

    let traj = simulate_auto(&scenario, &x0, args.t0, &p0, &alpha);
    let csv = trajectory_csv(&traj, scenario.dim);
    match &args.out {
        Some(path) => io::write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

fn cmd_plan(args: PlanArgs) -> Result<i32, Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let x0 = parse_point(&args.x0, scenario.dim)?;
    let p0 = parse_state(args.p0.as_ref(), scenario.n_targets())?;
    let art = io::load_artifacts(&scenario, &args.fields)?;
    let mut params = SynthesisParams::for_grid(&scenario, art.grid());
    if let Some(tol) = args.stop_tol {
        params.stop_tol = tol;
    }
    if let Some(dt) = args.dt_sim {
        params.sim_dt = dt;
    }
    let plan = synthesize_trajectory(&art, &scenario, &x0, args.t0, &p0, &params)?;
    let report = verify_plan(&plan);

    let csv = trajectory_csv(&plan.trajectory, scenario.dim);
    match &args.out {
        Some(path) => io::write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    println!("{}", plan_summary_line(&plan));
    if !report.is_ok() {
        eprintln!("plan verification issues: {:?}", report.issues);
        return Ok(EXIT_CHECK_FAILED);
    }
    Ok(EXIT_OK)
}

fn cmd_check(args: CheckArgs, seed: u64) -> Result<i32, Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let art = io::load_artifacts(&scenario, &args.fields)?;
    let grid = art.grid().clone();

    let pass = match args.mode {
        CheckMode::Obstacle => {
            let tol = args.tol.unwrap_or(1e-12);
            let mut max_violation = f64::NEG_INFINITY;
            let mut final_max = 0.0f64;
            for field in art.fields() {
                if field.p.is_final() {
                    final_max = field.values().iter().fold(0.0, |m, v| v.abs().max(m));
                    continue;
                }
                for k in 0..=grid.steps {
                    let t = grid.time_at(k);
                    let slice = field.slice(k);
                    for i in 0..grid.n_nodes() {
                        let x = grid.node_coord(i);
                        let psi = obstacle_psi(&art, &scenario, &field.p, &x, t)?;
                        max_violation = max_violation.max(slice[i] - psi);
                    }
                }
            }
            let pass = max_violation <= tol && final_max == 0.0;
            let report = serde_json::json!({
                "mode": "obstacle",
                "max_obstacle_violation": max_violation,
                "final_state_max_abs": final_max,
                "tol": tol,
                "pass": pass,
            });
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            pass
        }
        CheckMode::Dpp => {
            let tol = args.tol.unwrap_or(3.0 * (grid.max_dx() + grid.dt()));
            let report = check_dpp(&art, &scenario, args.samples, tol, seed)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            report.pass
        }
        CheckMode::Equivalence => {
            let tol = args.tol.unwrap_or(0.1);
            let ci = CoarseInstance::new(scenario.clone(), args.oracle_steps, args.budget)?;
            let probes = sample_probes(&ci, args.samples, seed);
            let report = check_equivalence(&ci, &art, &probes, args.tol_pair, tol)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            report.pass
        }
    };
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_export(args: ExportArgs) -> Result<i32, Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let text = scenario.canonical_json();
    match &args.out {
        Some(path) => io::write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}
