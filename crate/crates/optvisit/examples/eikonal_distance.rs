//! Solves the one-ball benchmark where the value function is known in
//! closed form: with unit speed, unit running cost and the distance as the
//! switch cost, moving trades cost for distance one to one, so the value
//! equals the distance field itself.
//!
//! ```bash
//! cargo run --release --example eikonal_distance
//! ```

use std::path::Path;

use optvisit::lattice::MemoryState;
use optvisit::scenario::parse_scenario;
use optvisit::solver::{solve_all, SpaceTimeGrid};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/eikonal_2d.json");
    let scenario = parse_scenario(&std::fs::read_to_string(path).unwrap()).unwrap();

    let grid = SpaceTimeGrid::uniform(&scenario, 81, 100);
    println!(
        "solving {} fields on a {}^2 x {} grid ...",
        1 << scenario.n_targets(),
        grid.nodes_per_dim[0],
        grid.steps
    );
    let art = solve_all(&scenario, grid).unwrap();

    let field = art.field(&MemoryState::parse("0").unwrap()).unwrap();
    let grid = art.grid();
    let mut max_err = 0.0f64;
    for k in 0..=grid.steps {
        let slice = field.slice(k);
        for i in 0..grid.n_nodes() {
            let d = scenario.target_distance(&grid.node_coord(i), 1);
            max_err = max_err.max((slice[i] - d).abs());
        }
    }
    println!("max |W - d(., T_1)| over all nodes and slices: {max_err:.3e}");

    for diag in &art.diagnostics {
        println!(
            "  state {}: {:.1} ms, obstacle active on up to {:.0}% of nodes",
            diag.state,
            diag.millis,
            100.0 * diag.obstacle_active_max
        );
    }

    // A cross-section through the ball center at t = 0.
    println!("\ncross-section y = 0.5, t = 0 (x, W, d):");
    for i in (0..=80).step_by(10) {
        let x = [i as f64 / 80.0, 0.5];
        let w = field.interpolate(&x, 0.0);
        let d = scenario.target_distance(&x, 1);
        println!("  {:.3}  {w:.6}  {d:.6}", x[0]);
    }
}
