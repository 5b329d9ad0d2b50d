//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line. Tolerances are pinned here, not configured.
//!
//! Criterion 4 is known-red: the scheme reproduces criterion 3's instance
//! exactly (see the criterion's test for the measured errors), so there is
//! no discretization error whose decay the ratio test could observe. The
//! companion `supplementary_first_order_convergence` test demonstrates the
//! intended first-order behavior on a variant with a genuine free boundary.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use optvisit::lattice::MemoryState;
use optvisit::oracle::{check_dpp, check_equivalence, sample_probes, CoarseInstance};
use optvisit::scenario::{parse_scenario, Scenario, SwitchCostSpec};
use optvisit::solver::{obstacle_psi, solve_all, SolveArtifacts, SpaceTimeGrid};
use optvisit::synthesis::{synthesize_trajectory, verify_plan, SynthesisParams};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    let text = std::fs::read_to_string(scenario_path(name)).unwrap();
    parse_scenario(&text).unwrap()
}

fn ms(s: &str) -> MemoryState {
    MemoryState::parse(s).unwrap()
}

/// Max over states, slices and nodes of `W - psi` (criterion 1 metric).
fn max_obstacle_violation(scenario: &Scenario, art: &SolveArtifacts) -> f64 {
    let grid = art.grid();
    let mut worst = f64::NEG_INFINITY;
    for field in art.fields() {
        if field.p.is_final() {
            continue;
        }
        for k in 0..=grid.steps {
            let t = grid.time_at(k);
            let slice = field.slice(k);
            for i in 0..grid.n_nodes() {
                let x = grid.node_coord(i);
                let psi = obstacle_psi(art, scenario, &field.p, &x, t).unwrap();
                worst = worst.max(slice[i] - psi);
            }
        }
    }
    worst
}

/// Max over slices and nodes of |W_empty - d(., T_1)| on the one-target
/// eikonal instance (criterion 3 metric).
fn eikonal_error(scenario: &Scenario, nx: usize, nt: usize) -> f64 {
    let art = solve_all(scenario, SpaceTimeGrid::uniform(scenario, nx, nt)).unwrap();
    let field = art.field(&ms("0")).unwrap();
    let grid = art.grid();
    let mut worst = 0.0f64;
    for k in 0..=grid.steps {
        let slice = field.slice(k);
        for i in 0..grid.n_nodes() {
            let d = scenario.target_distance(&grid.node_coord(i), 1);
            worst = worst.max((slice[i] - d).abs());
        }
    }
    worst
}

/// Reference artifacts shared by criteria 7 and 8.
fn reference_artifacts() -> &'static (Scenario, SolveArtifacts) {
    static ART: OnceLock<(Scenario, SolveArtifacts)> = OnceLock::new();
    ART.get_or_init(|| {
        let s = load("two_targets_2d.json");
        let art = solve_all(&s, SpaceTimeGrid::uniform(&s, 81, 100)).unwrap();
        (s, art)
    })
}

#[test]
fn criterion_1_obstacle_invariant() {
    let mut worst = f64::NEG_INFINITY;
    for (name, nx, nt) in [
        ("eikonal_2d.json", 41, 25),
        ("two_targets_2d.json", 41, 25),
        ("coarse_1d.json", 41, 8),
    ] {
        let s = load(name);
        let art = solve_all(&s, SpaceTimeGrid::uniform(&s, nx, nt)).unwrap();
        worst = worst.max(max_obstacle_violation(&s, &art));
    }
    let pass = worst <= 1e-12;
    println!(
        "criterion 1 (obstacle invariant W <= psi, all instances): {} — max violation {worst:.3e} (tol 1e-12)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "max obstacle violation {worst:.3e} > 1e-12");
}

#[test]
fn criterion_2_final_state_identity() {
    let mut worst = 0.0f64;
    for name in ["eikonal_2d.json", "two_targets_2d.json", "coarse_1d.json"] {
        let s = load(name);
        let art = solve_all(&s, SpaceTimeGrid::uniform(&s, 21, 8)).unwrap();
        let full = art.field(&MemoryState::full(s.n_targets())).unwrap();
        worst = worst.max(full.values().iter().fold(0.0, |m, v| v.abs().max(m)));
    }
    let pass = worst == 0.0;
    println!(
        "criterion 2 (final-state field identically zero): {} — max |W_final| = {worst:e}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn criterion_3_analytic_eikonal_field() {
    let s = load("eikonal_2d.json");
    let err = eikonal_error(&s, 81, 100);
    let pass = err <= 0.05;
    println!(
        "criterion 3 (eikonal 81^2 x 100: max |W - d| <= 0.05): {} — error {err:.3e}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "eikonal error {err} > 0.05");
}

#[test]
fn criterion_4_grid_convergence() {
    // Stated metric: criterion-3 errors at 21^2/41^2/81^2 with dt scaled
    // with dx, each halving shrinking the error by >= 1.5x.
    let s = load("eikonal_2d.json");
    let e21 = eikonal_error(&s, 21, 25);
    let e41 = eikonal_error(&s, 41, 50);
    let e81 = eikonal_error(&s, 81, 100);
    let r1 = e21 / e41;
    let r2 = e41 / e81;
    let pass = r1 >= 1.5 && r2 >= 1.5;
    println!(
        "criterion 4 (grid convergence e(h)/e(h/2) >= 1.5): {} — e = [{e21:.3e}, {e41:.3e}, {e81:.3e}], ratios = [{r1:.2}, {r2:.2}]",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(
        pass,
        "convergence ratios [{r1:.2}, {r2:.2}] below 1.5; the errors \
         [{e21:.3e}, {e41:.3e}, {e81:.3e}] are at machine precision because the \
         scheme reproduces this instance exactly (the obstacle d is exact at \
         nodes, convexity makes interpolation overestimate it, and unit speed \
         against unit running cost makes every continuation at least the \
         obstacle), so no discretization error is observable at any \
         resolution; see supplementary_first_order_convergence for the \
         intended rate on a genuinely non-contact instance"
    );
}

#[test]
fn supplementary_first_order_convergence() {
    // Demonstrates the rate criterion 4 is after, on a variant with a real
    // free boundary: switch cost 2d in 1D with exact radial controls. The
    // analytic value is d where the target is reachable in the remaining
    // time, else (T - t) + 2(d - (T - t)). Mean error halves per
    // refinement (first order); the max norm is kink-limited to ~sqrt(h).
    let s = parse_scenario(
        r#"{
            "dim": 1,
            "horizon": 1.0,
            "box": {"lo": [0.0], "hi": [1.0]},
            "targets": [{"ball": {"center": [0.5], "radius": 0.1}}],
            "dynamics": {"family": "velocity", "speed": 1.0},
            "running_cost": {"family": "constant", "c0": 1.0},
            "switch_cost": {"family": "distance_sum", "scale": 2.0},
            "control_set": {"vectors": [[-1.0], [0.0], [1.0]]}
        }"#,
    )
    .unwrap();
    let mean_error = |nx: usize, nt: usize| -> f64 {
        let art = solve_all(&s, SpaceTimeGrid::uniform(&s, nx, nt)).unwrap();
        let field = art.field(&ms("0")).unwrap();
        let grid = art.grid();
        let mut sum = 0.0f64;
        let mut count = 0u64;
        for k in 0..=grid.steps {
            let t = grid.time_at(k);
            let slice = field.slice(k);
            for i in 0..grid.n_nodes() {
                let d = s.target_distance(&grid.node_coord(i), 1);
                let rem = s.horizon - t;
                let exact = if d <= rem { d } else { rem + 2.0 * (d - rem) };
                sum += (slice[i] - exact).abs();
                count += 1;
            }
        }
        sum / count as f64
    };
    let e21 = mean_error(21, 25);
    let e41 = mean_error(41, 50);
    let e81 = mean_error(81, 100);
    let r1 = e21 / e41;
    let r2 = e41 / e81;
    let pass = r1 >= 1.5 && r2 >= 1.5;
    println!(
        "supplementary (first-order mean-error convergence, scale-2 variant): {} — e = [{e21:.3e}, {e41:.3e}, {e81:.3e}], ratios = [{r1:.2}, {r2:.2}]",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "mean-error ratios [{r1:.2}, {r2:.2}] below 1.5");
}

#[test]
fn criterion_5_oracle_equivalence() {
    let s = load("coarse_1d.json");
    let ci = CoarseInstance::new(s.clone(), 8, 100_000_000).unwrap();
    // Solver resolution-matched to the oracle: same time step, fine space.
    let art = solve_all(&s, SpaceTimeGrid::uniform(&s, 81, 8)).unwrap();
    let probes = sample_probes(&ci, 10, 2026);
    let report = check_equivalence(&ci, &art, &probes, 1e-9, 0.1).unwrap();
    println!(
        "criterion 5 (oracle equivalence, 10 probes): {} — max |direct - cascade| = {:.3e} (tol 1e-9), max |solver - direct| = {:.3e} (tol 0.1)",
        if report.pass { "PASS" } else { "FAIL" },
        report.max_pair_diff,
        report.max_solver_diff
    );
    assert!(report.max_pair_diff <= 1e-9, "{report:?}");
    assert!(report.max_solver_diff <= 0.1, "{report:?}");
}

#[test]
fn criterion_6_dpp_inequality_sampling() {
    let s = load("eikonal_2d.json");
    let art = solve_all(&s, SpaceTimeGrid::uniform(&s, 81, 100)).unwrap();
    let grid = art.grid();
    let tol = 3.0 * (grid.max_dx() + grid.dt());
    let report = check_dpp(&art, &s, 100, tol, 2026).unwrap();
    let pass = report.max_dpp_violation <= tol;
    println!(
        "criterion 6 (DPP inequality, 100 seeded samples): {} — max violation {:.3e} (tol {tol:.3e})",
        if pass { "PASS" } else { "FAIL" },
        report.max_dpp_violation
    );
    assert!(pass, "{report:?}");
}

#[test]
fn criterion_7_synthesis_consistency() {
    let (s, art) = reference_artifacts();
    let grid = art.grid();
    let params = SynthesisParams::for_grid(s, grid);
    let slack = 3.0 * (grid.max_dx() + grid.dt());
    let mut all_pass = true;
    let mut lines = Vec::new();
    for x0 in [[0.9, 0.1], [0.5, 0.5], [0.1, 0.1], [0.05, 0.95]] {
        let plan = synthesize_trajectory(art, s, &x0, 0.0, &ms("00"), &params).unwrap();
        let report = verify_plan(&plan);
        let upper = 1.05 * plan.predicted_cost + 0.05;
        let lower = plan.predicted_cost - slack;
        let ok = plan.achieved_cost <= upper && plan.achieved_cost >= lower && report.is_ok();
        all_pass &= ok;
        lines.push(format!(
            "x0={x0:?}: predicted {:.4}, achieved {:.4} in [{lower:.4}, {upper:.4}] {}",
            plan.predicted_cost,
            plan.achieved_cost,
            if ok { "ok" } else { "VIOLATED" }
        ));
    }
    println!(
        "criterion 7 (synthesis: achieved <= 1.05 predicted + 0.05 and >= predicted - 3(dx+dt)): {}",
        if all_pass { "PASS" } else { "FAIL" }
    );
    for line in &lines {
        println!("    {line}");
    }
    assert!(all_pass, "{lines:?}");
}

#[test]
fn criterion_8_switch_cost_monotonicity() {
    let (s, art) = reference_artifacts();
    let mut doubled = s.clone();
    doubled.switch_cost = SwitchCostSpec::DistanceSum { scale: 2.0 };
    let art2 = solve_all(&doubled, SpaceTimeGrid::uniform(&doubled, 81, 100)).unwrap();
    let mut min_diff = f64::INFINITY;
    for field in art.fields() {
        let other = art2.field(&field.p).unwrap();
        for (v1, v2) in field.values().iter().zip(other.values()) {
            min_diff = min_diff.min(v2 - v1);
        }
    }
    let pass = min_diff >= 0.0;
    println!(
        "criterion 8 (doubling the switch-cost scale raises every node): {} — min(W' - W) = {min_diff:e}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "doubling the switch cost lowered a node by {min_diff:e}");
}

#[test]
fn criterion_9_determinism() {
    let bin = env!("CARGO_BIN_EXE_optvisit");
    let scenario = scenario_path("coarse_1d.json");
    let work = tempfile::tempdir().unwrap();

    let run = |tag: &str| -> (PathBuf, Vec<u8>) {
        let out = work.path().join(format!("fields_{tag}"));
        let status = Command::new(bin)
            .args(["solve", "--scenario"])
            .arg(&scenario)
            .args(["--nx", "21", "--nt", "10", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "solve run {tag} failed");
        let plan_path = work.path().join(format!("plan_{tag}.csv"));
        let output = Command::new(bin)
            .args(["plan", "--scenario"])
            .arg(&scenario)
            .arg("--fields")
            .arg(&out)
            .args(["--x0", "0.5", "--p0", "00", "--out"])
            .arg(&plan_path)
            .output()
            .unwrap();
        assert!(output.status.success(), "plan run {tag} failed");
        let mut plan_bytes = std::fs::read(&plan_path).unwrap();
        plan_bytes.extend_from_slice(&output.stdout);
        (out, plan_bytes)
    };

    let (dir_a, plan_a) = run("a");
    let (dir_b, plan_b) = run("b");

    let mut all_identical = plan_a == plan_b;
    let mut compared = 0usize;
    for entry in std::fs::read_dir(&dir_a).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name();
        let a = std::fs::read(entry.path()).unwrap();
        let b = std::fs::read(dir_b.join(&name)).unwrap();
        if name.to_string_lossy().ends_with(".csv") {
            compared += 1;
            all_identical &= a == b;
        } else {
            // The manifest carries wall-clock timings; compare it with the
            // timings stripped.
            let strip = |bytes: &[u8]| -> serde_json::Value {
                let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
                v.as_object_mut().unwrap().remove("timings");
                v
            };
            all_identical &= strip(&a) == strip(&b);
        }
    }
    let pass = all_identical && compared > 0;
    println!(
        "criterion 9 (solve + plan reruns byte-identical, {compared} field CSVs + plan CSV + summary): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}
