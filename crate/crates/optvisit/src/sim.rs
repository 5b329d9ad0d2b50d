//! Forward simulation of the hybrid system and exact cost evaluation.
//!
//! Covers both models: the automatic-memory dynamics where a bit flips the
//! first time the trajectory touches the corresponding target, and the
//! relaxed switching model where the controller pays to discard targets at
//! chosen instants. Controls are piecewise constant on a uniform grid (the
//! only machine-representable class; measurable controls are approximated by
//! these). Integration is explicit Euler with the discounted running cost
//! accumulated by the composite trapezoid rule on the same grid, so the
//! quadrature error never dominates the first-order scheme error.

use std::fmt;

use crate::lattice::MemoryState;
use crate::scenario::Scenario;

/// Piecewise-constant control signal on a uniform grid: sample `k` applies
/// on `[start + k dt, start + (k+1) dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    pub start: f64,
    pub dt: f64,
    pub samples: Vec<Vec<f64>>,
}

impl ControlSignal {
    pub fn new(start: f64, dt: f64, samples: Vec<Vec<f64>>) -> Self {
        assert!(dt > 0.0, "control grid step must be positive");
        assert!(!samples.is_empty(), "control signal needs at least one sample");
        Self { start, dt, samples }
    }

    /// Constant signal covering `[start, end]`.
    pub fn constant(a: Vec<f64>, start: f64, dt: f64, end: f64) -> Self {
        let n = (((end - start) / dt).ceil() as usize).max(1);
        Self::new(start, dt, vec![a; n])
    }

    /// Control value at time `t`, clamped to the covered range.
    pub fn value_at(&self, t: f64) -> &[f64] {
        let k = ((t - self.start) / self.dt + 1e-9).floor() as isize;
        let k = k.clamp(0, self.samples.len() as isize - 1) as usize;
        &self.samples[k]
    }

    /// Last instant covered by the signal.
    pub fn end(&self) -> f64 {
        self.start + self.dt * self.samples.len() as f64
    }

    /// Checks every sample against the scenario's control set.
    pub fn validate_in_set(&self, scenario: &Scenario) -> Result<(), SimError> {
        for (k, a) in self.samples.iter().enumerate() {
            if scenario.control_index(a).is_none() {
                return Err(SimError::IllegalControl(format!(
                    "sample {k} ({a:?}) is not in the scenario control set"
                )));
            }
        }
        Ok(())
    }
}

/// Relaxed-model control string: continuous control plus the switch schedule
/// `t <= t_1 <= ... <= t_m <= T` with destinations `p_1, ..., p_{m-1}` and
/// the implicit final destination p-bar. Equal consecutive instants realize
/// simultaneous switches (the strict-inequality infimum is approached by
/// collapsing instants; the integrals over empty segments vanish).
#[derive(Debug, Clone)]
pub struct HybridControlString {
    pub alpha: ControlSignal,
    pub switch_times: Vec<f64>,
    /// `p_1 .. p_{m-1}`; one fewer than `switch_times`.
    pub destinations: Vec<MemoryState>,
}

impl HybridControlString {
    pub fn switch_count(&self) -> usize {
        self.switch_times.len()
    }

    /// Full destination chain including the final state.
    pub fn chain(&self, n_targets: usize) -> Vec<MemoryState> {
        let mut chain = self.destinations.clone();
        chain.push(MemoryState::full(n_targets));
        chain
    }
}

/// Simulation and cost-evaluation failures.
#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    IllegalControl(String),
    TauOutOfRange { tau: f64, t: f64, horizon: f64 },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::IllegalControl(msg) => write!(f, "illegal control: {msg}"),
            SimError::TauOutOfRange { tau, t, horizon } => {
                write!(f, "stopping time {tau} outside [{t}, {horizon}]")
            }
        }
    }
}

impl std::error::Error for SimError {}

/// Kinds of trajectory events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// The trajectory entered a target in the automatic-memory model.
    Touch,
    /// A paid switch of the memory state.
    Switch,
    /// The run ended (all targets handled or horizon reached).
    Stop,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Touch => write!(f, "touch"),
            EventKind::Switch => write!(f, "switch"),
            EventKind::Stop => write!(f, "stop"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryEvent {
    pub time: f64,
    pub kind: EventKind,
    pub detail: String,
    /// Index of the trajectory sample the event belongs to.
    pub sample: usize,
}

/// Cost breakdown: the discounted running-cost integral plus every
/// discounted switch/stop charge.
#[derive(Debug, Clone, Default)]
pub struct CostLedger {
    pub running_cost: f64,
    pub charges: Vec<(f64, f64)>,
}

impl CostLedger {
    pub fn total(&self) -> f64 {
        self.running_cost + self.charges.iter().map(|(_, c)| c).sum::<f64>()
    }
}

/// Sampled trajectory with memory evolution and cost ledger.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub memory: Vec<MemoryState>,
    pub events: Vec<TrajectoryEvent>,
    pub ledger: CostLedger,
    /// Discounted running cost accumulated up to each sample.
    pub running_cost_so_far: Vec<f64>,
}

impl Trajectory {
    pub fn total_cost(&self) -> f64 {
        self.ledger.total()
    }
}

/// Simulates the automatic-memory model: a memory bit flips permanently at
/// the first sample inside the corresponding target. The run ends at the
/// horizon or as soon as every target has been visited.
pub fn simulate_auto(
    scenario: &Scenario,
    x: &[f64],
    t: f64,
    p: &MemoryState,
    alpha: &ControlSignal,
) -> Trajectory {
    let horizon = scenario.horizon;
    let lambda = scenario.discount;
    let mut y = x.to_vec();
    let mut q = *p;
    let mut time = t;
    let mut running = 0.0;

    let mut traj = Trajectory {
        times: vec![time],
        states: vec![y.clone()],
        memory: vec![q],
        events: Vec::new(),
        ledger: CostLedger::default(),
        running_cost_so_far: vec![0.0],
    };

    let touch = |q: &mut MemoryState,
                 y: &[f64],
                 time: f64,
                 sample: usize,
                 events: &mut Vec<TrajectoryEvent>| {
        for j in q.missing_targets() {
            if scenario.in_target(y, j) {
                *q = q.with_set(j);
                events.push(TrajectoryEvent {
                    time,
                    kind: EventKind::Touch,
                    detail: format!("T{j}"),
                    sample,
                });
            }
        }
    };

    touch(&mut q, &y, time, 0, &mut traj.events);
    *traj.memory.last_mut().unwrap() = q;
    if q.is_final() {
        traj.events.push(TrajectoryEvent {
            time,
            kind: EventKind::Stop,
            detail: String::new(),
            sample: 0,
        });
        return traj;
    }

    while time < horizon - 1e-12 {
        let h = alpha.dt.min(horizon - time);
        let a = alpha.value_at(time).to_vec();
        let f = scenario.eval_dynamics(&y, &a, &q);
        let g0 = (-lambda * (time - t)).exp() * scenario.eval_running_cost(&y, &a, &q, time);
        let y_next: Vec<f64> = y.iter().zip(&f).map(|(yi, fi)| yi + h * fi).collect();
        let time_next = time + h;
        let g1 = (-lambda * (time_next - t)).exp()
            * scenario.eval_running_cost(&y_next, &a, &q, time_next);
        running += 0.5 * h * (g0 + g1);

        y = y_next;
        time = time_next;
        let sample = traj.times.len();
        touch(&mut q, &y, time, sample, &mut traj.events);

        traj.times.push(time);
        traj.states.push(y.clone());
        traj.memory.push(q);
        traj.running_cost_so_far.push(running);

        if q.is_final() {
            traj.events.push(TrajectoryEvent {
                time,
                kind: EventKind::Stop,
                detail: String::new(),
                sample,
            });
            break;
        }
    }

    traj.ledger.running_cost = running;
    traj
}

/// Advances `y` from `seg_start` to `seg_end` with memory fixed at `q`,
/// stepping on the control-signal grid, and returns the discounted
/// running-cost integral (discount anchored at `t_origin`). The oracle
/// shares this integrator so that oracle-vs-solver discrepancies isolate
/// the PDE discretization error.
pub(crate) fn integrate_segment(
    scenario: &Scenario,
    y: &mut Vec<f64>,
    q: &MemoryState,
    alpha: &ControlSignal,
    t_origin: f64,
    seg_start: f64,
    seg_end: f64,
) -> f64 {
    let lambda = scenario.discount;
    let mut time = seg_start;
    let mut acc = 0.0;
    while time < seg_end - 1e-12 {
        // Next signal-grid boundary strictly after `time`, capped at the
        // segment end, so control changes land exactly on step boundaries.
        let k = ((time - alpha.start) / alpha.dt + 1e-9).floor() + 1.0;
        let next = (alpha.start + k * alpha.dt).min(seg_end);
        let h = next - time;
        let a = alpha.value_at(time).to_vec();
        let f = scenario.eval_dynamics(y, &a, q);
        let g0 = (-lambda * (time - t_origin)).exp() * scenario.eval_running_cost(y, &a, q, time);
        for (yi, fi) in y.iter_mut().zip(&f) {
            *yi += h * fi;
        }
        let g1 = (-lambda * (next - t_origin)).exp() * scenario.eval_running_cost(y, &a, q, next);
        acc += 0.5 * h * (g0 + g1);
        time = next;
    }
    acc
}

/// Cost of a full switching-control string from `(x, t, p)`:
/// per segment the discounted running cost with the current memory, plus the
/// discounted switch charge at each switching instant.
pub fn evaluate_switching_cost(
    scenario: &Scenario,
    x: &[f64],
    t: f64,
    p: &MemoryState,
    u: &HybridControlString,
) -> Result<f64, SimError> {
    let m = u.switch_count();
    if m < 1 {
        return Err(SimError::IllegalControl("at least one switch is required".into()));
    }
    if u.destinations.len() + 1 != m {
        return Err(SimError::IllegalControl(format!(
            "{m} switch times require {} intermediate destinations, got {}",
            m - 1,
            u.destinations.len()
        )));
    }
    let chain = u.chain(scenario.n_targets());
    let mut prev = *p;
    for dest in &chain {
        if !prev.can_switch_to(dest) {
            return Err(SimError::IllegalControl(format!(
                "destination {dest} not admissible from {prev}"
            )));
        }
        prev = *dest;
    }
    let mut last = t;
    for &tj in &u.switch_times {
        if tj < last - 1e-12 || tj > scenario.horizon + 1e-12 {
            return Err(SimError::IllegalControl(format!(
                "switch times must be nondecreasing in [{t}, {}]",
                scenario.horizon
            )));
        }
        last = tj;
    }

    let lambda = scenario.discount;
    let mut y = x.to_vec();
    let mut cost = 0.0;
    let mut seg_start = t;
    let mut current = *p;
    for (j, &tj) in u.switch_times.iter().enumerate() {
        cost += integrate_segment(scenario, &mut y, &current, &u.alpha, t, seg_start, tj);
        let dest = chain[j];
        cost += (-lambda * (tj - t)).exp() * scenario.switch_charge(&y, &current, &dest);
        current = dest;
        seg_start = tj;
    }
    Ok(cost)
}

/// Cost of running with fixed memory `p` until `tau`, then stopping and
/// paying the obstacle `psi(y(tau), tau)`.
pub fn evaluate_stopping_cost(
    scenario: &Scenario,
    x: &[f64],
    t: f64,
    p: &MemoryState,
    alpha: &ControlSignal,
    tau: f64,
    psi: &dyn Fn(&[f64], f64) -> f64,
) -> Result<f64, SimError> {
    if tau < t - 1e-12 || tau > scenario.horizon + 1e-12 {
        return Err(SimError::TauOutOfRange { tau, t, horizon: scenario.horizon });
    }
    let mut y = x.to_vec();
    let integral = integrate_segment(scenario, &mut y, p, alpha, t, t, tau);
    let stop = (-scenario.discount * (tau - t)).exp() * psi(&y, tau);
    Ok(integral + stop)
}
