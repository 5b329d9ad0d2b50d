//! Solver toolkit for optimal visiting problems.
//!
//! A trajectory must handle a collection of disjoint targets before a finite
//! horizon: it can steer toward them, or discard any subset at any moment for
//! a price (for instance the current distance to each discarded target). The
//! memory of which targets are done lives in a bit vector, and the value
//! functions, one per memory state, solve a cascade of time-dependent
//! obstacle problems coupled through the cheapest-switch stopping cost.
//!
//! The crate provides:
//!
//! - [`scenario`]: problem instances (targets, dynamics, running and switch
//!   costs) parsed from JSON, validated, and evaluated pointwise;
//! - [`lattice`]: the bitmask memory state, admissible switch sets, and the
//!   backward processing order;
//! - [`sim`]: forward hybrid simulation and exact cost evaluation for both
//!   the automatic-memory and the relaxed switching model;
//! - [`solver`]: the semi-Lagrangian backward cascade producing one value
//!   field per memory state;
//! - [`synthesis`]: feedback policies and full visiting plans extracted from
//!   the solved fields;
//! - [`oracle`]: brute-force enumeration on tiny instances and structural
//!   checks (obstacle bound, dynamic programming inequality, equivalence of
//!   the switching and cascade formulations);
//! - [`io`]: CSV/SVG/manifest export and re-import of solve artifacts;
//! - [`cli`]: the `solve`, `simulate`, `plan`, `check`, `export` commands.
//!
//! Start with the runnable examples (`cargo run --example plan_two_targets`)
//! or the CLI (`cargo run -- solve --help`).

pub mod cli;
pub mod io;
pub mod lattice;
pub mod oracle;
pub mod scenario;
pub mod sim;
pub mod solver;
pub mod synthesis;

pub use lattice::{backward_levels, chi, LatticeOrder, MemoryState};
pub use oracle::{
    brute_force_cascade, brute_force_value, check_dpp, check_equivalence, sample_probes,
    CoarseInstance, OracleError, Probe,
};
pub use scenario::{parse_scenario, Scenario, ScenarioError, ValidationReport};
pub use sim::{
    evaluate_stopping_cost, evaluate_switching_cost, simulate_auto, ControlSignal,
    HybridControlString, Trajectory,
};
pub use solver::{
    hamiltonian, obstacle_psi, sl_step, solve_all, solve_all_with, solve_level, SolveArtifacts,
    SolveError, SolveParams, SpaceTimeGrid, ValueField,
};
pub use synthesis::{
    feedback_policy, synthesize_trajectory, verify_plan, Decision, PlanReport, SynthesisParams,
    VisitingPlan,
};
