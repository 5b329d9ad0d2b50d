//! Tour of the memory lattice: backward processing order, admissible
//! switch sets, and the per-target flip flags.
//!
//! ```bash
//! cargo run --example lattice_walk
//! ```

use optvisit::lattice::{backward_levels, chi, MemoryState};

fn main() {
    let n = 4;
    let order = backward_levels(n);

    println!("backward processing order for {n} targets (2^{n} = {} states):", 1 << n);
    for (k, level) in order.levels().iter().enumerate() {
        let states: Vec<String> = level.iter().map(|p| p.to_string()).collect();
        println!("  level {k} ({} missing): {}", k, states.join(" "));
    }

    let p = MemoryState::parse("1000").unwrap();
    println!("\nadmissible switch destinations from {p}:");
    for q in p.successors() {
        let flips: Vec<String> = (1..=n)
            .filter(|&j| chi(j, &p, &q) == 1)
            .map(|j| format!("T{j}"))
            .collect();
        println!("  {q}  (discards {})", flips.join(", "));
    }
    println!(
        "\nthe final state {} has {} destinations: the game stops there",
        MemoryState::full(n),
        MemoryState::full(n).successors().len()
    );
}
