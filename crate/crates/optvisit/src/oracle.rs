//! Brute-force evaluation on tiny instances and structural checks.
//!
//! The oracle minimizes the exact switching cost over every enumerable
//! control string: piecewise-constant controls on a coarse time grid, switch
//! times restricted to the grid points, every admissible destination chain.
//! It shares the simulator's integrator and quadrature, so disagreements
//! with the PDE solver isolate the discretization error of the scheme. A
//! second, independently structured enumeration solves the cascade of
//! stopping problems innermost-first; on the aligned discrete spaces the two
//! must agree to rounding, which witnesses the switching/stopping
//! equivalence.
//!
//! Enumeration order is controls outermost, switch structures innermost,
//! with early pruning once the accumulated cost reaches the incumbent.
//! Costs are nonnegative, so pruning never changes the minimum; results are
//! bit-identical with pruning on or off.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::lattice::MemoryState;
use crate::scenario::Scenario;
use crate::sim::{integrate_segment, ControlSignal, SimError};
use crate::solver::{obstacle_psi, SolveArtifacts, SolveError};

/// A scenario small enough to enumerate exhaustively.
#[derive(Debug, Clone)]
pub struct CoarseInstance {
    pub scenario: Scenario,
    /// Oracle time steps over [0, T]; switch times live on this grid.
    pub oracle_steps: usize,
    /// Cap on `|A_h|^steps x switch structures`; exceeding it is a refusal,
    /// never a silent truncation.
    pub budget_cap: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    InstanceTooLarge(String),
    /// The requested enumeration would exceed the budget.
    BudgetExceeded { required: u64, cap: u64 },
    /// Brute-force probes must sit on the oracle time grid.
    ProbeOffGrid { t: f64 },
    Sim(String),
    Solve(String),
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::InstanceTooLarge(msg) => write!(f, "instance too large: {msg}"),
            OracleError::BudgetExceeded { required, cap } => {
                write!(f, "enumeration needs {required} strings, budget cap is {cap}")
            }
            OracleError::ProbeOffGrid { t } => {
                write!(f, "probe time {t} is not on the oracle grid")
            }
            OracleError::Sim(msg) | OracleError::Solve(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for OracleError {}

impl From<SimError> for OracleError {
    fn from(e: SimError) -> Self {
        OracleError::Sim(e.to_string())
    }
}

impl From<SolveError> for OracleError {
    fn from(e: SolveError) -> Self {
        OracleError::Solve(e.to_string())
    }
}

impl CoarseInstance {
    pub fn new(scenario: Scenario, oracle_steps: usize, budget_cap: u64) -> Result<Self, OracleError> {
        if scenario.dim > 2 {
            return Err(OracleError::InstanceTooLarge(format!(
                "oracle instances need dim <= 2, got {}",
                scenario.dim
            )));
        }
        if scenario.n_targets() > 2 {
            return Err(OracleError::InstanceTooLarge(format!(
                "oracle instances need <= 2 targets, got {}",
                scenario.n_targets()
            )));
        }
        let n_controls = scenario.control_vectors().len();
        if n_controls > 5 {
            return Err(OracleError::InstanceTooLarge(format!(
                "oracle instances need <= 5 controls, got {n_controls}"
            )));
        }
        if oracle_steps == 0 || oracle_steps > 10 {
            return Err(OracleError::InstanceTooLarge(format!(
                "oracle grid needs 1..=10 steps, got {oracle_steps}"
            )));
        }
        Ok(Self { scenario, oracle_steps, budget_cap })
    }

    pub fn dt(&self) -> f64 {
        self.scenario.horizon / self.oracle_steps as f64
    }

    pub fn time_at(&self, k: usize) -> f64 {
        if k == self.oracle_steps {
            self.scenario.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    /// Grid index of `t`, or an error if `t` is off-grid.
    fn grid_index(&self, t: f64) -> Result<usize, OracleError> {
        let u = t / self.dt();
        let k = u.round();
        if (u - k).abs() > 1e-9 || k < 0.0 || k > self.oracle_steps as f64 {
            return Err(OracleError::ProbeOffGrid { t });
        }
        Ok(k as usize)
    }

    /// Number of admissible `(m, times, chain)` switch structures from `p`
    /// with `r + 1` available instants.
    fn structure_count(&self, p: &MemoryState, r: usize) -> u64 {
        let missing = (p.target_count() - p.popcount()) as u64;
        let mut total = 0u64;
        for m in 1..=missing {
            // Ordered partitions of the missing targets into m nonempty
            // blocks, times the nondecreasing m-tuples of instants.
            total += ordered_partitions(missing, m) * n_multisets(r as u64 + 1, m);
        }
        total
    }

    fn check_budget(&self, p: &MemoryState, r: usize) -> Result<(), OracleError> {
        let n_controls = self.scenario.control_vectors().len() as u64;
        let strings = n_controls
            .checked_pow(r as u32)
            .and_then(|c| c.checked_mul(self.structure_count(p, r)))
            .unwrap_or(u64::MAX);
        if strings > self.budget_cap {
            return Err(OracleError::BudgetExceeded { required: strings, cap: self.budget_cap });
        }
        Ok(())
    }
}

/// Ordered set partitions of `z` labeled elements into `m` nonempty blocks.
fn ordered_partitions(z: u64, m: u64) -> u64 {
    if m == 0 {
        return u64::from(z == 0);
    }
    if z < m {
        return 0;
    }
    // Sum over the size of the first block.
    let mut total = 0;
    for k in 1..=(z - (m - 1)) {
        total += binomial(z, k) * ordered_partitions(z - k, m - 1);
    }
    total
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out = 1u64;
    for i in 0..k {
        out = out * (n - i) / (i + 1);
    }
    out
}

/// Nondecreasing `m`-tuples from `v` values: C(v + m - 1, m).
fn n_multisets(v: u64, m: u64) -> u64 {
    binomial(v + m - 1, m)
}

/// Direct brute force: minimum switching cost over every piecewise-constant
/// control on the oracle grid, every switch count, every nondecreasing
/// grid-point switch schedule, and every admissible destination chain.
pub fn brute_force_value(
    ci: &CoarseInstance,
    x: &[f64],
    t: f64,
    p: &MemoryState,
) -> Result<f64, OracleError> {
    brute_force_value_impl(ci, x, t, p, true)
}

/// Same minimization with branch pruning disabled; exposed for the
/// bit-identity regression test.
pub fn brute_force_value_unpruned(
    ci: &CoarseInstance,
    x: &[f64],
    t: f64,
    p: &MemoryState,
) -> Result<f64, OracleError> {
    brute_force_value_impl(ci, x, t, p, false)
}

fn brute_force_value_impl(
    ci: &CoarseInstance,
    x: &[f64],
    t: f64,
    p: &MemoryState,
    prune: bool,
) -> Result<f64, OracleError> {
    if p.is_final() {
        return Ok(0.0);
    }
    let i0 = ci.grid_index(t)?;
    let r = ci.oracle_steps - i0;
    ci.check_budget(p, r)?;

    let scenario = &ci.scenario;
    let controls = scenario.control_vectors();
    let dt = ci.dt();
    let mut incumbent = f64::INFINITY;

    let mut sequence = vec![0usize; r.max(1)];
    loop {
        let samples: Vec<Vec<f64>> = sequence.iter().map(|&i| controls[i].clone()).collect();
        let alpha = ControlSignal::new(t, dt, samples);
        // Innermost: explore switch structures along this control.
        explore_structures(scenario, &alpha, x, t, i0, ci, p, 0.0, &mut incumbent, prune);

        // Next control sequence in lexicographic order.
        if r == 0 {
            break;
        }
        let mut pos = r;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            sequence[pos] += 1;
            if sequence[pos] < controls.len() {
                break;
            }
            sequence[pos] = 0;
        }
        if sequence.iter().all(|&i| i == 0) {
            break;
        }
    }
    Ok(incumbent)
}

/// Walks all switch structures for one fixed control: advance the state one
/// oracle step at a time and branch on switching at each grid instant.
#[allow(clippy::too_many_arguments)]
fn explore_structures(
    scenario: &Scenario,
    alpha: &ControlSignal,
    x: &[f64],
    t_origin: f64,
    from_index: usize,
    ci: &CoarseInstance,
    p: &MemoryState,
    acc: f64,
    incumbent: &mut f64,
    prune: bool,
) {
    let lambda = scenario.discount;
    let mut y = x.to_vec();
    let mut integral = 0.0;
    for j in from_index..=ci.oracle_steps {
        if j > from_index {
            let t_prev = ci.time_at(j - 1);
            let t_now = ci.time_at(j);
            integral +=
                integrate_segment(scenario, &mut y, p, alpha, t_origin, t_prev, t_now);
        }
        if prune && acc + integral >= *incumbent {
            // Running costs are nonnegative: no later switch instant and no
            // branch below can beat the incumbent.
            return;
        }
        let t_j = ci.time_at(j);
        let discount = (-lambda * (t_j - t_origin)).exp();
        for q in p.successors() {
            let cost_here = acc + integral + discount * scenario.switch_charge(&y, p, &q);
            if q.is_final() {
                if cost_here < *incumbent {
                    *incumbent = cost_here;
                }
            } else {
                if prune && cost_here >= *incumbent {
                    continue;
                }
                explore_structures(
                    scenario, alpha, &y, t_origin, j, ci, &q, cost_here, incumbent, prune,
                );
            }
        }
    }
}

/// Cascade brute force: the stopping problem at `p` minimizes over stop
/// instant, destination, and the control up to the stop, with the
/// destination's own brute-forced value as stopping data (final state worth
/// zero). Witnesses the equivalence of the switching and stopping models on
/// the aligned discrete spaces.
pub fn brute_force_cascade(
    ci: &CoarseInstance,
    x: &[f64],
    t: f64,
    p: &MemoryState,
) -> Result<f64, OracleError> {
    if p.is_final() {
        return Ok(0.0);
    }
    let i0 = ci.grid_index(t)?;
    ci.check_budget(p, ci.oracle_steps - i0)?;

    let scenario = &ci.scenario;
    let controls = scenario.control_vectors();
    let dt = ci.dt();
    let lambda = scenario.discount;
    let mut best = f64::INFINITY;

    for j in i0..=ci.oracle_steps {
        let len = j - i0;
        let mut sequence = vec![0usize; len.max(1)];
        loop {
            let samples: Vec<Vec<f64>> =
                sequence.iter().map(|&i| controls[i].clone()).collect();
            let alpha = ControlSignal::new(t, dt, samples);
            let mut y = x.to_vec();
            let tau = ci.time_at(j);
            let integral = integrate_segment(scenario, &mut y, p, &alpha, t, t, tau);
            let discount = (-lambda * (tau - t)).exp();
            for q in p.successors() {
                let stop_cost = scenario.switch_charge(&y, p, &q)
                    + brute_force_cascade(ci, &y, tau, &q)?;
                let total = integral + discount * stop_cost;
                if total < best {
                    best = total;
                }
            }

            if len == 0 {
                break;
            }
            let mut pos = len;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                sequence[pos] += 1;
                if sequence[pos] < controls.len() {
                    break;
                }
                sequence[pos] = 0;
            }
            if sequence.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    Ok(best)
}

/// Report of the dynamic programming checks on solved fields.
#[derive(Debug, Clone, Serialize)]
pub struct DppReport {
    /// Max of `W - psi` over all states, slices and nodes (inequality (i)).
    pub max_obstacle_violation: f64,
    /// Max violation of the suboptimality inequality along simulated
    /// controls (inequality (ii)).
    pub max_dpp_violation: f64,
    pub samples: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Checks the two dynamic programming inequalities on the solved family:
/// (i) the value never exceeds the obstacle, nodewise; (ii) along any
/// simulated control held for a while, the value at the start is at most
/// the accrued cost plus the discounted value at the end.
pub fn check_dpp(
    art: &SolveArtifacts,
    scenario: &Scenario,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<DppReport, OracleError> {
    let grid = art.grid().clone();
    let mut max_obstacle = f64::NEG_INFINITY;
    for field in art.fields() {
        if field.p.is_final() {
            continue;
        }
        for k in 0..=grid.steps {
            let t = grid.time_at(k);
            let slice = field.slice(k);
            for i in 0..grid.n_nodes() {
                let x = grid.node_coord(i);
                let psi = obstacle_psi(art, scenario, &field.p, &x, t)?;
                max_obstacle = max_obstacle.max(slice[i] - psi);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let controls = scenario.control_vectors();
    let non_final: Vec<MemoryState> = art
        .fields()
        .iter()
        .map(|f| f.p)
        .filter(|p| !p.is_final())
        .collect();
    let lambda = scenario.discount;
    let dt = grid.dt();
    let mut max_dpp = f64::NEG_INFINITY;
    for _ in 0..samples {
        let p = non_final[rng.gen_range(0..non_final.len())];
        let field = art.field(&p).expect("solved field");
        let x: Vec<f64> = grid
            .lo
            .iter()
            .zip(&grid.hi)
            .map(|(l, h)| rng.gen_range(*l..=*h))
            .collect();
        let k = rng.gen_range(0..grid.steps);
        let j = rng.gen_range(0..=(grid.steps - k));
        let t = grid.time_at(k);
        let t_end = grid.time_at(k + j);
        let samples_alpha: Vec<Vec<f64>> = (0..j.max(1))
            .map(|_| controls[rng.gen_range(0..controls.len())].clone())
            .collect();
        let alpha = ControlSignal::new(t, dt, samples_alpha);
        let mut y = x.clone();
        let integral = integrate_segment(scenario, &mut y, &p, &alpha, t, t, t_end);
        let rhs = integral + (-lambda * (t_end - t)).exp() * field.interpolate(&y, t_end);
        let lhs = field.interpolate(&x, t);
        max_dpp = max_dpp.max(lhs - rhs);
    }

    let pass = max_obstacle <= 1e-12 && max_dpp <= tol;
    Ok(DppReport {
        max_obstacle_violation: max_obstacle,
        max_dpp_violation: max_dpp,
        samples,
        tol,
        pass,
    })
}

/// One equivalence probe.
#[derive(Debug, Clone)]
pub struct Probe {
    pub x: Vec<f64>,
    pub t: f64,
    pub p: MemoryState,
}

/// Seeded probes on the oracle grid.
pub fn sample_probes(ci: &CoarseInstance, count: usize, seed: u64) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = &ci.scenario;
    let states: Vec<MemoryState> = crate::lattice::backward_levels(s.n_targets())
        .states()
        .filter(|p| !p.is_final())
        .collect();
    (0..count)
        .map(|_| Probe {
            x: s.domain
                .lo
                .iter()
                .zip(&s.domain.hi)
                .map(|(l, h)| rng.gen_range(*l..=*h))
                .collect(),
            t: ci.time_at(rng.gen_range(0..ci.oracle_steps)),
            p: states[rng.gen_range(0..states.len())],
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceRow {
    pub x: Vec<f64>,
    pub t: f64,
    pub state: String,
    pub brute_force: f64,
    pub cascade: f64,
    pub solver: f64,
    pub pair_diff: f64,
    pub solver_diff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
    pub max_pair_diff: f64,
    pub max_solver_diff: f64,
    pub tol_pair: f64,
    pub tol_solver: f64,
    pub pass: bool,
}

/// Compares, per probe, the direct brute force, the cascade brute force,
/// and the interpolated solver value.
pub fn check_equivalence(
    ci: &CoarseInstance,
    art: &SolveArtifacts,
    probes: &[Probe],
    tol_pair: f64,
    tol_solver: f64,
) -> Result<EquivalenceReport, OracleError> {
    let mut rows = Vec::with_capacity(probes.len());
    let mut max_pair = 0.0f64;
    let mut max_solver = 0.0f64;
    for probe in probes {
        let bf = brute_force_value(ci, &probe.x, probe.t, &probe.p)?;
        let cascade = brute_force_cascade(ci, &probe.x, probe.t, &probe.p)?;
        let solver = match art.field(&probe.p) {
            Some(field) => field.interpolate(&probe.x, probe.t),
            None => {
                return Err(OracleError::Solve(format!(
                    "no solved field for state {}",
                    probe.p
                )))
            }
        };
        let pair_diff = (bf - cascade).abs();
        let solver_diff = (bf - solver).abs();
        max_pair = max_pair.max(pair_diff);
        max_solver = max_solver.max(solver_diff);
        rows.push(EquivalenceRow {
            x: probe.x.clone(),
            t: probe.t,
            state: probe.p.to_string(),
            brute_force: bf,
            cascade,
            solver,
            pair_diff,
            solver_diff,
        });
    }
    let pass = max_pair <= tol_pair && max_solver <= tol_solver;
    Ok(EquivalenceReport { rows, max_pair_diff: max_pair, max_solver_diff: max_solver, tol_pair, tol_solver, pass })
}
