//! Problem instances: targets, dynamics, running cost, switch cost, and the
//! computational domain, together with pointwise evaluation of all model
//! functions.
//!
//! A scenario is described by a single JSON document (see `docs/scenario.md`
//! or the files under `scenarios/`). Parsing applies defaults and enforces
//! the structural invariants (disjoint targets inside the box, nonnegative
//! costs, positive speeds); `validate` reports the model bounds used by the
//! solver error estimates.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lattice::{chi, MemoryState, MAX_TARGETS};

/// Target set in `R^d`: a closed ball or an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

/// Computational domain `[lo, hi]` per dimension; the solver truncates
/// `R^d` to this box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Controlled dynamics family. Both built-ins are constant in `x`, so the
/// Lipschitz constant is 0 and the bound `M` is `max_p s_p (+ |b|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DynamicsSpec {
    /// `f(x, a, p) = s_p * a`.
    Velocity {
        speed: f64,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        speed_overrides: BTreeMap<String, f64>,
    },
    /// `f(x, a, p) = s_p * a + b` for a constant drift `b`.
    DriftVelocity {
        speed: f64,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        speed_overrides: BTreeMap<String, f64>,
        drift: Vec<f64>,
    },
}

/// Running cost family; all built-ins are independent of `x`, `a` and `p`,
/// which makes the continuity modulus in the model hypotheses trivial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RunningCostSpec {
    /// `l = c0`.
    Constant { c0: f64 },
    /// `l(t) = c0 + c1 * t`.
    TimeAffine { c0: f64, c1: f64 },
    /// `l(t) = c0 + g(t)` with `g` piecewise linear through `(t, value)`
    /// breakpoints, clamped outside their range.
    TimeTable { c0: f64, breakpoints: Vec<(f64, f64)> },
}

/// Switch cost family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SwitchCostSpec {
    /// `C(x, p, p') = scale * sum_j chi_j(p, p') d(x, T_j)`: pay the distance
    /// to every discarded target.
    DistanceSum {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `C = scale * per_bit * #flipped bits`.
    ConstantPerDiscard {
        per_bit: f64,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Finite sample of the compact control set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlSetSpec {
    /// Explicit list of control vectors.
    Explicit { vectors: Vec<Vec<f64>> },
    /// `n` unit directions (plus the zero control, always included so that
    /// waiting is representable). Supported for d <= 2.
    UnitDirections { unit_directions: usize },
}

/// Full problem instance. Immutable after parse; every evaluation method is
/// pure, so scenarios can be shared freely across worker threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dim: usize,
    pub horizon: f64,
    #[serde(default)]
    pub discount: f64,
    #[serde(rename = "box")]
    pub domain: Domain,
    pub targets: Vec<Shape>,
    pub dynamics: DynamicsSpec,
    pub running_cost: RunningCostSpec,
    pub switch_cost: SwitchCostSpec,
    #[serde(default)]
    pub control_set: Option<ControlSetSpec>,
}

/// Errors from scenario ingestion and model evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    /// Document does not conform to the schema.
    Parse(String),
    /// An invariant is violated; names the offending field.
    Validation { field: String, message: String },
    /// More targets than the memory lattice supports.
    LatticeTooLarge { n: usize },
    /// Requested switch destination is not admissible from the source state.
    IllegalSwitch { from: String, to: String },
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Parse(msg) => write!(f, "scenario parse error: {msg}"),
            ScenarioError::Validation { field, message } => {
                write!(f, "scenario field '{field}': {message}")
            }
            ScenarioError::LatticeTooLarge { n } => {
                write!(f, "lattice too large: {n} targets exceed the {MAX_TARGETS}-target cap")
            }
            ScenarioError::IllegalSwitch { from, to } => {
                write!(f, "illegal switch from {from} to {to}: destinations must add at least one visited target and drop none")
            }
        }
    }
}

impl std::error::Error for ScenarioError {}

/// Model bounds and invariant findings for a scenario. Violations are
/// reported, not raised; the caller decides.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// Sup of |f| over the domain, controls and memory states.
    pub dynamics_bound: f64,
    /// Lipschitz constant of f in x (0 for the built-in families).
    pub lipschitz_constant: f64,
    /// Sup of the running cost on [0, T].
    pub running_cost_sup: f64,
    /// Modulus bound for the running cost in x (0: built-ins are
    /// x-independent).
    pub running_cost_modulus: f64,
    pub targets_disjoint: bool,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut scenario: Scenario =
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    if scenario.targets.len() > MAX_TARGETS {
        return Err(ScenarioError::LatticeTooLarge { n: scenario.targets.len() });
    }
    scenario.check_structure()?;
    // Materialize the control-set default so the canonical export carries it.
    if scenario.control_set.is_none() {
        scenario.control_set = Some(default_control_set(scenario.dim));
    }
    let report = scenario.validate();
    if let Some(v) = report.violations.first() {
        let (field, message) = v.split_once(": ").unwrap_or(("scenario", v.as_str()));
        return Err(ScenarioError::Validation {
            field: field.to_string(),
            message: message.to_string(),
        });
    }
    Ok(scenario)
}

fn default_control_set(dim: usize) -> ControlSetSpec {
    match dim {
        1 => ControlSetSpec::UnitDirections { unit_directions: 2 },
        _ => ControlSetSpec::UnitDirections { unit_directions: 16 },
    }
}

impl Scenario {
    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    /// Euclidean distance from `x` to target `j` (1-based); 0 iff `x` lies
    /// in the target.
    pub fn target_distance(&self, x: &[f64], j: usize) -> f64 {
        assert!(j >= 1 && j <= self.n_targets(), "target index {j} out of range");
        shape_distance(&self.targets[j - 1], x)
    }

    /// True iff `x` lies in target `j`.
    pub fn in_target(&self, x: &[f64], j: usize) -> bool {
        self.target_distance(x, j) <= 0.0
    }

    /// Speed `s_p` for the current memory state.
    pub fn speed_for(&self, p: &MemoryState) -> f64 {
        let (speed, overrides) = match &self.dynamics {
            DynamicsSpec::Velocity { speed, speed_overrides } => (speed, speed_overrides),
            DynamicsSpec::DriftVelocity { speed, speed_overrides, .. } => {
                (speed, speed_overrides)
            }
        };
        overrides.get(&p.to_string()).copied().unwrap_or(*speed)
    }

    /// Dynamics `f(x, a, p)`; constant in `x` for the built-in families.
    pub fn eval_dynamics(&self, _x: &[f64], a: &[f64], p: &MemoryState) -> Vec<f64> {
        let s = self.speed_for(p);
        match &self.dynamics {
            DynamicsSpec::Velocity { .. } => a.iter().map(|ai| s * ai).collect(),
            DynamicsSpec::DriftVelocity { drift, .. } => {
                a.iter().zip(drift).map(|(ai, bi)| s * ai + bi).collect()
            }
        }
    }

    /// Running cost `l(x, a, p, t)`.
    pub fn eval_running_cost(&self, _x: &[f64], _a: &[f64], _p: &MemoryState, t: f64) -> f64 {
        match &self.running_cost {
            RunningCostSpec::Constant { c0 } => *c0,
            RunningCostSpec::TimeAffine { c0, c1 } => c0 + c1 * t,
            RunningCostSpec::TimeTable { c0, breakpoints } => c0 + table_value(breakpoints, t),
        }
    }

    /// Switch cost `C(x, p, p')`; errors if `p'` is not an admissible
    /// destination from `p`.
    pub fn eval_switch_cost(
        &self,
        x: &[f64],
        p: &MemoryState,
        q: &MemoryState,
    ) -> Result<f64, ScenarioError> {
        if !p.can_switch_to(q) {
            return Err(ScenarioError::IllegalSwitch { from: p.to_string(), to: q.to_string() });
        }
        Ok(self.switch_charge(x, p, q))
    }

    /// Switch cost without the admissibility check, for callers that already
    /// iterate over admissible destinations.
    pub(crate) fn switch_charge(&self, x: &[f64], p: &MemoryState, q: &MemoryState) -> f64 {
        match &self.switch_cost {
            SwitchCostSpec::DistanceSum { scale } => {
                let sum: f64 = (1..=self.n_targets())
                    .filter(|&j| chi(j, p, q) == 1)
                    .map(|j| self.target_distance(x, j))
                    .sum();
                scale * sum
            }
            SwitchCostSpec::ConstantPerDiscard { per_bit, scale } => {
                let flips = (1..=self.n_targets()).filter(|&j| chi(j, p, q) == 1).count();
                scale * per_bit * flips as f64
            }
        }
    }

    /// The finite control sample `A_h`.
    pub fn control_vectors(&self) -> Vec<Vec<f64>> {
        let spec = self.control_set.clone().unwrap_or_else(|| default_control_set(self.dim));
        match spec {
            ControlSetSpec::Explicit { vectors } => vectors,
            ControlSetSpec::UnitDirections { unit_directions } => {
                let mut out = Vec::with_capacity(unit_directions + 1);
                match self.dim {
                    1 => {
                        out.push(vec![-1.0]);
                        out.push(vec![1.0]);
                    }
                    2 => {
                        for k in 0..unit_directions {
                            let angle =
                                2.0 * std::f64::consts::PI * k as f64 / unit_directions as f64;
                            out.push(vec![angle.cos(), angle.sin()]);
                        }
                    }
                    // check_structure rejects the generator for d >= 3.
                    d => unreachable!("unit-direction generator with dim {d}"),
                }
                out.push(vec![0.0; self.dim]);
                out
            }
        }
    }

    /// Index of `a` in the control sample, matched within 1e-12 per
    /// component.
    pub fn control_index(&self, a: &[f64]) -> Option<usize> {
        self.control_vectors().iter().position(|v| {
            v.len() == a.len() && v.iter().zip(a).all(|(vi, ai)| (vi - ai).abs() <= 1e-12)
        })
    }

    /// Sup of |f|: `max_p s_p * max_a |a| + |b|`.
    pub fn dynamics_bound(&self) -> f64 {
        let max_speed = {
            let (speed, overrides) = match &self.dynamics {
                DynamicsSpec::Velocity { speed, speed_overrides } => (speed, speed_overrides),
                DynamicsSpec::DriftVelocity { speed, speed_overrides, .. } => {
                    (speed, speed_overrides)
                }
            };
            overrides.values().fold(*speed, |m, &s| m.max(s))
        };
        let max_control = self
            .control_vectors()
            .iter()
            .map(|a| norm(a))
            .fold(0.0f64, f64::max);
        let drift_norm = match &self.dynamics {
            DynamicsSpec::Velocity { .. } => 0.0,
            DynamicsSpec::DriftVelocity { drift, .. } => norm(drift),
        };
        max_speed * max_control + drift_norm
    }

    /// Sup of the running cost on [0, T].
    pub fn running_cost_sup(&self) -> f64 {
        match &self.running_cost {
            RunningCostSpec::Constant { c0 } => *c0,
            RunningCostSpec::TimeAffine { c0, c1 } => c0.max(c0 + c1 * self.horizon),
            RunningCostSpec::TimeTable { c0, breakpoints } => {
                breakpoints.iter().map(|&(_, v)| c0 + v).fold(*c0, f64::max)
            }
        }
    }

    fn running_cost_inf(&self) -> f64 {
        match &self.running_cost {
            RunningCostSpec::Constant { c0 } => *c0,
            RunningCostSpec::TimeAffine { c0, c1 } => c0.min(c0 + c1 * self.horizon),
            RunningCostSpec::TimeTable { c0, breakpoints } => {
                breakpoints.iter().map(|&(_, v)| c0 + v).fold(*c0, f64::min)
            }
        }
    }

    /// Structural checks that must hold before any evaluation method is
    /// safe to call: consistent dimensions, nonempty lists, well-formed
    /// override keys and breakpoints.
    fn check_structure(&self) -> Result<(), ScenarioError> {
        let err = |field: &str, message: String| {
            Err(ScenarioError::Validation { field: field.into(), message })
        };
        let d = self.dim;
        if d < 1 {
            return err("dim", "dimension must be >= 1".into());
        }
        if self.targets.is_empty() {
            return err("targets", "at least one target is required".into());
        }
        if self.domain.lo.len() != d || self.domain.hi.len() != d {
            return err("box", format!("lo/hi must have {d} components"));
        }
        for (idx, t) in self.targets.iter().enumerate() {
            let field = format!("targets[{idx}]");
            match t {
                Shape::Ball { center, .. } if center.len() != d => {
                    return err(&field, format!("center must have {d} components"));
                }
                Shape::Box { lo, hi } if lo.len() != d || hi.len() != d => {
                    return err(&field, format!("lo/hi must have {d} components"));
                }
                _ => {}
            }
        }
        if let DynamicsSpec::DriftVelocity { drift, .. } = &self.dynamics {
            if drift.len() != d {
                return err("dynamics.drift", format!("drift must have {d} components"));
            }
        }
        let overrides = match &self.dynamics {
            DynamicsSpec::Velocity { speed_overrides, .. }
            | DynamicsSpec::DriftVelocity { speed_overrides, .. } => speed_overrides,
        };
        for key in overrides.keys() {
            let parsed = MemoryState::parse(key);
            if parsed.is_err() || key.len() != self.n_targets() {
                return err(
                    "dynamics.speed_overrides",
                    format!("key '{key}' is not a {}-bit memory state", self.n_targets()),
                );
            }
        }
        if let RunningCostSpec::TimeTable { breakpoints, .. } = &self.running_cost {
            if breakpoints.is_empty() {
                return err("running_cost.breakpoints", "at least one breakpoint".into());
            }
            if breakpoints.windows(2).any(|w| w[0].0 >= w[1].0) {
                return err(
                    "running_cost.breakpoints",
                    "breakpoint times must be strictly increasing".into(),
                );
            }
        }
        match &self.control_set {
            Some(ControlSetSpec::Explicit { vectors }) => {
                if vectors.is_empty() {
                    return err("control_set.vectors", "at least one control".into());
                }
                if let Some(v) = vectors.iter().find(|v| v.len() != d) {
                    return err(
                        "control_set.vectors",
                        format!("control {v:?} must have {d} components"),
                    );
                }
            }
            Some(ControlSetSpec::UnitDirections { unit_directions }) => {
                if d > 2 {
                    return err(
                        "control_set.unit_directions",
                        "unit-direction generator supports dim <= 2; list vectors explicitly"
                            .into(),
                    );
                }
                if d == 2 && *unit_directions == 0 {
                    return err("control_set.unit_directions", "must be >= 1".into());
                }
            }
            None => {}
        }
        if self.n_targets() > MAX_TARGETS {
            return Err(ScenarioError::LatticeTooLarge { n: self.n_targets() });
        }
        Ok(())
    }

    /// Computes the model bounds and lists all invariant violations. Never
    /// fails; the report speaks for itself.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.horizon <= 0.0 {
            violations.push(format!("horizon: must be > 0, got {}", self.horizon));
        }
        if self.discount < 0.0 {
            violations.push(format!("discount: must be >= 0, got {}", self.discount));
        }
        for (i, lo) in self.domain.lo.iter().enumerate() {
            if *lo >= self.domain.hi[i] {
                violations.push(format!("box: lo must be < hi componentwise (component {i})"));
            }
        }
        for (idx, t) in self.targets.iter().enumerate() {
            match t {
                Shape::Ball { radius, .. } if *radius <= 0.0 => {
                    violations.push(format!("targets[{idx}]: radius must be > 0"));
                }
                Shape::Box { lo, hi } if lo.iter().zip(hi).any(|(l, h)| l >= h) => {
                    violations.push(format!("targets[{idx}]: lo must be < hi componentwise"));
                }
                _ => {}
            }
            if !shape_inside_domain(t, &self.domain) {
                violations.push(format!("targets[{idx}]: not contained in the box"));
            }
        }
        let mut disjoint = true;
        for i in 0..self.targets.len() {
            for j in (i + 1)..self.targets.len() {
                if shape_gap(&self.targets[i], &self.targets[j]) <= 0.0 {
                    disjoint = false;
                    violations.push(format!("targets: targets {} and {} not disjoint", i + 1, j + 1));
                }
            }
        }
        let (speed, overrides) = match &self.dynamics {
            DynamicsSpec::Velocity { speed, speed_overrides } => (speed, speed_overrides),
            DynamicsSpec::DriftVelocity { speed, speed_overrides, .. } => (speed, speed_overrides),
        };
        if *speed <= 0.0 {
            violations.push("dynamics.speed: must be > 0".into());
        }
        for (k, s) in overrides {
            if *s <= 0.0 {
                violations.push(format!("dynamics.speed_overrides['{k}']: must be > 0"));
            }
        }
        if self.running_cost_inf() < 0.0 {
            violations.push(format!(
                "running_cost: negative on [0, {}] (min {})",
                self.horizon,
                self.running_cost_inf()
            ));
        }
        match &self.switch_cost {
            SwitchCostSpec::DistanceSum { scale } if *scale <= 0.0 => {
                violations.push("switch_cost.scale: must be > 0".into());
            }
            SwitchCostSpec::ConstantPerDiscard { per_bit, scale } => {
                if *per_bit < 0.0 {
                    violations.push("switch_cost.per_bit: must be >= 0".into());
                }
                if *scale <= 0.0 {
                    violations.push("switch_cost.scale: must be > 0".into());
                }
            }
            _ => {}
        }
        if self.control_vectors().is_empty() {
            violations.push("control_set: must contain at least one control".into());
        }
        ValidationReport {
            dynamics_bound: self.dynamics_bound(),
            lipschitz_constant: 0.0,
            running_cost_sup: self.running_cost_sup(),
            running_cost_modulus: 0.0,
            targets_disjoint: disjoint,
            violations,
        }
    }

    /// Canonical document: the parsed scenario re-serialized with all
    /// defaults materialized. Byte-stable, so it doubles as the digest
    /// input.
    pub fn canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the canonical document.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let hash = Sha256::digest(self.canonical_json().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn table_value(breakpoints: &[(f64, f64)], t: f64) -> f64 {
    let first = breakpoints[0];
    let last = breakpoints[breakpoints.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    for w in breakpoints.windows(2) {
        let (t0, v0) = w[0];
        let (t1, v1) = w[1];
        if t <= t1 {
            let theta = (t - t0) / (t1 - t0);
            return v0 + theta * (v1 - v0);
        }
    }
    last.1
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn shape_distance(shape: &Shape, x: &[f64]) -> f64 {
    match shape {
        Shape::Ball { center, radius } => {
            let d: f64 = x
                .iter()
                .zip(center)
                .map(|(xi, ci)| (xi - ci) * (xi - ci))
                .sum::<f64>()
                .sqrt();
            (d - radius).max(0.0)
        }
        Shape::Box { lo, hi } => {
            // Closest-point projection: clamp componentwise.
            let sq: f64 = x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(xi, (l, h))| {
                    let gap = (l - xi).max(xi - h).max(0.0);
                    gap * gap
                })
                .sum();
            sq.sqrt()
        }
    }
}

fn shape_inside_domain(shape: &Shape, domain: &Domain) -> bool {
    match shape {
        Shape::Ball { center, radius } => center
            .iter()
            .zip(domain.lo.iter().zip(&domain.hi))
            .all(|(c, (l, h))| c - radius >= *l && c + radius <= *h),
        Shape::Box { lo, hi } => lo
            .iter()
            .zip(hi)
            .zip(domain.lo.iter().zip(&domain.hi))
            .all(|((tl, th), (l, h))| tl >= l && th <= h),
    }
}

/// Euclidean gap between two target sets; <= 0 means they intersect.
fn shape_gap(a: &Shape, b: &Shape) -> f64 {
    match (a, b) {
        (Shape::Ball { center: c1, radius: r1 }, Shape::Ball { center: c2, radius: r2 }) => {
            let d: f64 = c1
                .iter()
                .zip(c2)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            d - r1 - r2
        }
        (Shape::Ball { center, radius }, bx @ Shape::Box { .. })
        | (bx @ Shape::Box { .. }, Shape::Ball { center, radius }) => {
            shape_distance(bx, center) - radius
        }
        (Shape::Box { lo: l1, hi: h1 }, Shape::Box { lo: l2, hi: h2 }) => {
            let sq: f64 = l1
                .iter()
                .zip(h1)
                .zip(l2.iter().zip(h2))
                .map(|((al, ah), (bl, bh))| {
                    let gap = (bl - ah).max(al - bh).max(0.0);
                    gap * gap
                })
                .sum();
            sq.sqrt()
        }
    }
}
