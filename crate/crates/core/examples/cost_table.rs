//! Running cost of the receding-horizon controller on the cubic integrator
//! for several budgets, one row per initial state.
//!
//! Run with `cargo run --release --example cost_table`.

use opmin::{closed_loop, cubic_integrator, running_cost};
use rayon::prelude::*;

const STATES: [[f64; 2]; 4] = [[10.0, 15.0], [-1.0, 1.5], [-15.0, -10.0], [10.0, -15.0]];
const BUDGETS: [u64; 3] = [30, 300, 3000];
const STEPS: usize = 200;

fn main() -> opmin::Result<()> {
    let sys = cubic_integrator();
    let cells: Vec<(usize, usize)> =
        (0..STATES.len()).flat_map(|i| (0..BUDGETS.len()).map(move |j| (i, j))).collect();
    let costs = cells
        .par_iter()
        .map(|&(i, j)| closed_loop(&sys, &STATES[i], 1.0, BUDGETS[j], STEPS).map(|t| running_cost(&t)))
        .collect::<opmin::Result<Vec<f64>>>()?;

    println!("{:>16} {:>14} {:>14} {:>14}", "x0", "B=30", "B=300", "B=3000");
    for (i, x0) in STATES.iter().enumerate() {
        let row = &costs[i * BUDGETS.len()..(i + 1) * BUDGETS.len()];
        println!(
            "{:>16} {:>14.1} {:>14.1} {:>14.1}",
            format!("({}, {})", x0[0], x0[1]),
            row[0],
            row[1],
            row[2]
        );
    }
    Ok(())
}
