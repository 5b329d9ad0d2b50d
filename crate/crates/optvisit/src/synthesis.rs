//! Feedback policies and visiting plans extracted from solved value fields.
//!
//! The stopping rule is first contact with the obstacle: switch as soon as
//! the value meets the cheapest-switch cost within a tolerance that absorbs
//! the first-order scheme error. Away from contact, the policy follows the
//! control realizing the semi-Lagrangian continuation minimum. Rolling the
//! policy forward produces one admissible switching-control string whose
//! exact cost is then re-evaluated with the simulator, so the gap between
//! achieved and predicted cost is attributable purely to discretization.

use std::fmt;

use crate::lattice::MemoryState;
use crate::scenario::Scenario;
use crate::sim::{
    evaluate_switching_cost, ControlSignal, CostLedger, EventKind, HybridControlString, SimError,
    Trajectory, TrajectoryEvent,
};
use crate::solver::{obstacle_psi, SolveArtifacts, SolveError, SpaceTimeGrid};

/// Tolerances for policy extraction and rollout.
#[derive(Debug, Clone)]
pub struct SynthesisParams {
    /// Contact detection threshold on `psi - W`.
    pub stop_tol: f64,
    /// Rollout time step.
    pub sim_dt: f64,
}

impl SynthesisParams {
    /// Defaults tied to the grid: the free-boundary test must absorb the
    /// interpolation error of the contact set (which scales with the grid),
    /// while every unit of slack is paid as early-switch cost, so the
    /// threshold stays as small as detection allows. The rollout step
    /// resolves the grid motion.
    pub fn for_grid(scenario: &Scenario, grid: &SpaceTimeGrid) -> Self {
        let stop_tol =
            0.5 * (grid.max_dx() + grid.dt()) * (1.0 + scenario.running_cost_sup());
        let m = scenario.dynamics_bound();
        let sim_dt = if m > 0.0 { grid.max_dx() / (2.0 * m) } else { grid.dt() };
        Self { stop_tol, sim_dt }
    }
}

/// One feedback decision at a query point.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Keep moving with this control (index into the scenario control set).
    Continue { control_index: usize, control: Vec<f64>, margin: f64 },
    /// Stop and switch to this state.
    Switch { to: MemoryState, margin: f64 },
}

impl Decision {
    /// `psi - W` at the query point; at most `stop_tol` below zero.
    pub fn margin(&self) -> f64 {
        match self {
            Decision::Continue { margin, .. } | Decision::Switch { margin, .. } => *margin,
        }
    }
}

/// A paid switch along a plan.
#[derive(Debug, Clone)]
pub struct SwitchEvent {
    pub time: f64,
    pub from: MemoryState,
    pub to: MemoryState,
    pub position: Vec<f64>,
    /// Discounted charge booked at the switch instant.
    pub charge: f64,
}

/// Synthesized trajectory, its switch schedule, and the cost ledger.
#[derive(Debug, Clone)]
pub struct VisitingPlan {
    pub initial_state: MemoryState,
    pub trajectory: Trajectory,
    pub switches: Vec<SwitchEvent>,
    /// Exact cost of the realized control string (re-simulated).
    pub achieved_cost: f64,
    /// Solver value interpolated at the start point.
    pub predicted_cost: f64,
}

/// Outcome of checking a plan's structure and cost gap.
#[derive(Debug, Clone)]
pub struct PlanReport {
    /// `(achieved - predicted) / max(predicted, eps)`.
    pub relative_gap: f64,
    pub chain_legal: bool,
    pub switch_times_monotone: bool,
    pub memory_monotone: bool,
    pub issues: Vec<String>,
}

impl PlanReport {
    pub fn is_ok(&self) -> bool {
        self.chain_legal && self.switch_times_monotone && self.memory_monotone
    }
}

#[derive(Debug)]
pub enum SynthesisError {
    /// No decision exists at the final state.
    NoDecision,
    Solve(SolveError),
    Sim(SimError),
}

impl fmt::Display for SynthesisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthesisError::NoDecision => write!(f, "no decision at the final memory state"),
            SynthesisError::Solve(e) => write!(f, "{e}"),
            SynthesisError::Sim(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for SynthesisError {}

impl From<SolveError> for SynthesisError {
    fn from(e: SolveError) -> Self {
        SynthesisError::Solve(e)
    }
}

impl From<SimError> for SynthesisError {
    fn from(e: SimError) -> Self {
        SynthesisError::Sim(e)
    }
}

/// Cheapest admissible switch destination at `(x, t)`; ties resolved toward
/// the smallest state in lattice order.
fn best_switch(
    art: &SolveArtifacts,
    scenario: &Scenario,
    p: &MemoryState,
    x: &[f64],
    t: f64,
) -> Result<(MemoryState, f64), SynthesisError> {
    let mut best: Option<(MemoryState, f64)> = None;
    for q in p.successors() {
        let field = art.field(&q).ok_or(SolveError::OrderingViolation {
            state: p.to_string(),
            missing: q.to_string(),
        })?;
        let cost = scenario.switch_charge(x, p, &q) + field.interpolate(x, t);
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((q, cost));
        }
    }
    best.ok_or(SynthesisError::NoDecision)
}

/// Feedback decision at `(x, t, p)`: switch on contact (within `stop_tol`),
/// otherwise continue with the control minimizing the one-step
/// semi-Lagrangian operand.
pub fn feedback_policy(
    art: &SolveArtifacts,
    scenario: &Scenario,
    x: &[f64],
    t: f64,
    p: &MemoryState,
    params: &SynthesisParams,
) -> Result<Decision, SynthesisError> {
    if p.is_final() {
        return Err(SynthesisError::NoDecision);
    }
    let field = art.field(p).ok_or(SolveError::OrderingViolation {
        state: p.to_string(),
        missing: p.to_string(),
    })?;
    let w = field.interpolate(x, t);
    let psi = obstacle_psi(art, scenario, p, x, t)?;
    let margin = psi - w;
    if w >= psi - params.stop_tol {
        let (to, _) = best_switch(art, scenario, p, x, t)?;
        return Ok(Decision::Switch { to, margin });
    }

    let grid = art.grid();
    let dt = grid.dt();
    let discount = (-scenario.discount * dt).exp();
    let t_next = (t + dt).min(grid.horizon);
    let mut best_idx = 0usize;
    let mut best_control = Vec::new();
    let mut best_value = f64::INFINITY;
    for (idx, a) in scenario.control_vectors().into_iter().enumerate() {
        let f = scenario.eval_dynamics(x, &a, p);
        let foot: Vec<f64> = x.iter().zip(&f).map(|(xi, fi)| xi + dt * fi).collect();
        let value = dt * scenario.eval_running_cost(x, &a, p, t)
            + discount * field.interpolate(&foot, t_next);
        if value < best_value {
            best_value = value;
            best_idx = idx;
            best_control = a;
        }
    }
    Ok(Decision::Continue { control_index: best_idx, control: best_control, margin })
}

/// Rolls the feedback policy forward from `(x0, t0, p0)` until the final
/// state. Switch charges are discounted to `t0`; if the horizon is reached
/// first, the remaining switches to the full state are forced at `T` (the
/// relaxed model always permits them). The achieved cost is the simulator's
/// evaluation of the realized control string, not the rollout accumulator.
pub fn synthesize_trajectory(
    art: &SolveArtifacts,
    scenario: &Scenario,
    x0: &[f64],
    t0: f64,
    p0: &MemoryState,
    params: &SynthesisParams,
) -> Result<VisitingPlan, SynthesisError> {
    let horizon = scenario.horizon;
    let lambda = scenario.discount;
    let dt = params.sim_dt;

    let mut y = x0.to_vec();
    let mut t = t0;
    let mut p = *p0;
    let mut running = 0.0f64;

    let mut trajectory = Trajectory {
        times: vec![t],
        states: vec![y.clone()],
        memory: vec![p],
        events: Vec::new(),
        ledger: CostLedger::default(),
        running_cost_so_far: vec![0.0],
    };
    let mut switches: Vec<SwitchEvent> = Vec::new();
    let mut controls: Vec<Vec<f64>> = Vec::new();

    let predicted_cost = match art.field(p0) {
        Some(field) => field.interpolate(x0, t0),
        None => {
            return Err(SynthesisError::Solve(SolveError::OrderingViolation {
                state: p0.to_string(),
                missing: p0.to_string(),
            }))
        }
    };

    let book_switch = |p: &mut MemoryState,
                           to: MemoryState,
                           y: &[f64],
                           t: f64,
                           trajectory: &mut Trajectory,
                           switches: &mut Vec<SwitchEvent>| {
        let charge = (-lambda * (t - t0)).exp() * scenario.switch_charge(y, p, &to);
        trajectory.events.push(TrajectoryEvent {
            time: t,
            kind: EventKind::Switch,
            detail: format!("{p}->{to}"),
            sample: trajectory.times.len(),
        });
        trajectory.ledger.charges.push((t, charge));
        switches.push(SwitchEvent { time: t, from: *p, to, position: y.to_vec(), charge });
        *p = to;
        trajectory.times.push(t);
        trajectory.states.push(y.to_vec());
        trajectory.memory.push(to);
        trajectory.running_cost_so_far.push(trajectory.ledger.running_cost);
    };

    while !p.is_final() {
        if t >= horizon - 1e-12 {
            // Horizon reached: force the remaining switches at T, cheapest
            // destination first.
            while !p.is_final() {
                let (to, _) = best_switch(art, scenario, &p, &y, horizon)?;
                book_switch(&mut p, to, &y, horizon, &mut trajectory, &mut switches);
            }
            break;
        }
        match feedback_policy(art, scenario, &y, t, &p, params)? {
            Decision::Switch { to, .. } => {
                book_switch(&mut p, to, &y, t, &mut trajectory, &mut switches);
            }
            Decision::Continue { control, .. } => {
                let h = dt.min(horizon - t);
                let f = scenario.eval_dynamics(&y, &control, &p);
                let g0 = (-lambda * (t - t0)).exp()
                    * scenario.eval_running_cost(&y, &control, &p, t);
                let y_next: Vec<f64> = y.iter().zip(&f).map(|(yi, fi)| yi + h * fi).collect();
                let t_next = t + h;
                let g1 = (-lambda * (t_next - t0)).exp()
                    * scenario.eval_running_cost(&y_next, &control, &p, t_next);
                running += 0.5 * h * (g0 + g1);
                controls.push(control);
                y = y_next;
                t = t_next;
                trajectory.times.push(t);
                trajectory.states.push(y.clone());
                trajectory.memory.push(p);
                trajectory.ledger.running_cost = running;
                trajectory.running_cost_so_far.push(running);
            }
        }
    }
    trajectory.ledger.running_cost = running;
    trajectory.events.push(TrajectoryEvent {
        time: t.min(horizon),
        kind: EventKind::Stop,
        detail: String::new(),
        sample: trajectory.times.len() - 1,
    });

    let achieved_cost = if switches.is_empty() {
        // p0 was already final: nothing to do, nothing to pay.
        0.0
    } else {
        if controls.is_empty() {
            controls.push(vec![0.0; scenario.dim]);
        }
        let u = HybridControlString {
            alpha: ControlSignal::new(t0, dt, controls),
            switch_times: switches.iter().map(|s| s.time).collect(),
            destinations: switches.iter().take(switches.len() - 1).map(|s| s.to).collect(),
        };
        evaluate_switching_cost(scenario, x0, t0, p0, &u)?
    };

    Ok(VisitingPlan {
        initial_state: *p0,
        trajectory,
        switches,
        achieved_cost,
        predicted_cost,
    })
}

/// Structural and cost-gap checks on a synthesized plan.
pub fn verify_plan(plan: &VisitingPlan) -> PlanReport {
    let mut issues = Vec::new();

    let mut chain_legal = true;
    let mut current = plan.initial_state;
    for sw in &plan.switches {
        if sw.from != current || !current.can_switch_to(&sw.to) {
            chain_legal = false;
            issues.push(format!("illegal switch {} -> {} at t={}", sw.from, sw.to, sw.time));
        }
        current = sw.to;
    }
    if !plan.switches.is_empty() && !current.is_final() {
        chain_legal = false;
        issues.push(format!("switch chain ends at {current}, not the final state"));
    }

    let switch_times_monotone = plan
        .switches
        .windows(2)
        .all(|w| w[0].time <= w[1].time + 1e-12);
    if !switch_times_monotone {
        issues.push("switch times are not nondecreasing".into());
    }

    let memory_monotone = plan
        .trajectory
        .memory
        .windows(2)
        .all(|w| w[0].raw_bits() & !w[1].raw_bits() == 0);
    if !memory_monotone {
        issues.push("trajectory memory unset a bit".into());
    }

    let relative_gap =
        (plan.achieved_cost - plan.predicted_cost) / plan.predicted_cost.max(1e-9);

    PlanReport { relative_gap, chain_legal, switch_times_monotone, memory_monotone, issues }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;
    use crate::solver::{solve_all, SpaceTimeGrid};
    use approx::assert_abs_diff_eq;

    fn ms(s: &str) -> MemoryState {
        MemoryState::parse(s).unwrap()
    }

    fn eikonal_2d() -> Scenario {
        parse_scenario(
            r#"{
                "dim": 2,
                "horizon": 1.0,
                "box": {"lo": [0.0, 0.0], "hi": [1.0, 1.0]},
                "targets": [{"ball": {"center": [0.5, 0.5], "radius": 0.1}}],
                "dynamics": {"family": "velocity", "speed": 1.0},
                "running_cost": {"family": "constant", "c0": 1.0},
                "switch_cost": {"family": "distance_sum"}
            }"#,
        )
        .unwrap()
    }

    fn solve_eikonal() -> (Scenario, SolveArtifacts, SynthesisParams) {
        let s = eikonal_2d();
        let grid = SpaceTimeGrid::uniform(&s, 21, 20);
        let art = solve_all(&s, grid).unwrap();
        let params = SynthesisParams::for_grid(&s, art.grid());
        (s, art, params)
    }

    #[test]
    fn inside_the_target_the_policy_switches_with_zero_margin() {
        let (s, art, params) = solve_eikonal();
        let d = feedback_policy(&art, &s, &[0.5, 0.5], 0.0, &ms("0"), &params).unwrap();
        match d {
            Decision::Switch { to, margin } => {
                assert_eq!(to, ms("1"));
                assert_abs_diff_eq!(margin, 0.0, epsilon = 1e-12);
            }
            other => panic!("expected switch, got {other:?}"),
        }
    }

    #[test]
    fn at_the_horizon_the_policy_always_switches() {
        let (s, art, params) = solve_eikonal();
        for x in [[0.1, 0.1], [0.9, 0.2], [0.5, 0.5]] {
            let d = feedback_policy(&art, &s, &x, 1.0, &ms("0"), &params).unwrap();
            assert!(matches!(d, Decision::Switch { .. }), "at T the value equals the obstacle");
        }
    }

    #[test]
    fn no_decision_at_the_final_state() {
        let (s, art, params) = solve_eikonal();
        let err = feedback_policy(&art, &s, &[0.5, 0.5], 0.0, &ms("1"), &params).unwrap_err();
        assert!(matches!(err, SynthesisError::NoDecision));
    }

    #[test]
    fn eikonal_plan_switches_immediately_and_costs_the_distance() {
        // Stopping immediately is optimal everywhere in this instance, so
        // the plan is a single switch at t0 with cost d(x0, T_1).
        let (s, art, params) = solve_eikonal();
        let x0 = [0.2, 0.8];
        let plan = synthesize_trajectory(&art, &s, &x0, 0.0, &ms("0"), &params).unwrap();
        assert_eq!(plan.switches.len(), 1);
        assert_eq!(plan.switches[0].time, 0.0);
        let d = s.target_distance(&x0, 1);
        assert_abs_diff_eq!(plan.achieved_cost, d, epsilon = 1e-9);
        assert_abs_diff_eq!(plan.predicted_cost, d, epsilon = 1e-6);
        let report = verify_plan(&plan);
        assert!(report.is_ok());
        assert!(report.relative_gap.abs() <= 1e-6);
    }

    #[test]
    fn plan_from_the_final_state_is_trivial() {
        let (s, art, params) = solve_eikonal();
        let plan = synthesize_trajectory(&art, &s, &[0.3, 0.3], 0.2, &ms("1"), &params).unwrap();
        assert!(plan.switches.is_empty());
        assert_eq!(plan.achieved_cost, 0.0);
        assert_eq!(plan.predicted_cost, 0.0);
    }

    #[test]
    fn switch_count_is_bounded_by_missing_targets() {
        let s = parse_scenario(
            r#"{
                "dim": 1,
                "horizon": 1.0,
                "box": {"lo": [0.0], "hi": [1.0]},
                "targets": [
                    {"box": {"lo": [0.2], "hi": [0.3]}},
                    {"box": {"lo": [0.7], "hi": [0.8]}}
                ],
                "dynamics": {"family": "velocity", "speed": 1.0},
                "running_cost": {"family": "constant", "c0": 1.0},
                "switch_cost": {"family": "distance_sum"},
                "control_set": {"vectors": [[-1.0], [0.0], [1.0]]}
            }"#,
        )
        .unwrap();
        let grid = SpaceTimeGrid::uniform(&s, 41, 20);
        let art = solve_all(&s, grid).unwrap();
        let params = SynthesisParams::for_grid(&s, art.grid());
        for x0 in [[0.0], [0.45], [0.95]] {
            let plan = synthesize_trajectory(&art, &s, &x0, 0.0, &ms("00"), &params).unwrap();
            assert!(plan.switches.len() <= 2);
            let report = verify_plan(&plan);
            assert!(report.is_ok(), "{:?}", report.issues);
        }
    }

    #[test]
    fn plans_are_deterministic() {
        let (s, art, params) = solve_eikonal();
        let a = synthesize_trajectory(&art, &s, &[0.15, 0.6], 0.0, &ms("0"), &params).unwrap();
        let b = synthesize_trajectory(&art, &s, &[0.15, 0.6], 0.0, &ms("0"), &params).unwrap();
        assert_eq!(a.achieved_cost.to_bits(), b.achieved_cost.to_bits());
        assert_eq!(a.trajectory.times, b.trajectory.times);
        assert_eq!(a.trajectory.states, b.trajectory.states);
        assert_eq!(a.switches.len(), b.switches.len());
    }

    #[test]
    fn verify_plan_flags_injected_illegal_chain() {
        let (s, art, params) = solve_eikonal();
        let mut plan =
            synthesize_trajectory(&art, &s, &[0.2, 0.8], 0.0, &ms("0"), &params).unwrap();
        // Corrupt the chain: claim the switch started elsewhere.
        plan.switches[0].from = ms("1");
        let report = verify_plan(&plan);
        assert!(!report.chain_legal);
        assert!(!report.issues.is_empty());
    }
}
