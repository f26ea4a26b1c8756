//! Planning on a user-defined system built from closures.

use opmin::system::{validate, FnSystem};
use opmin::{closed_loop, running_cost};

fn main() -> opmin::Result<()> {
    // a scalar system with a contracting mode and an expanding one that is cheaper to use
    let sys = FnSystem::new(
        "two_gains",
        1,
        2,
        |mode, x: &[f64]| vec![if mode == 1 { 0.5 * x[0] } else { 1.1 * x[0] + 0.1 }],
        |mode, x: &[f64]| x[0] * x[0] + if mode == 1 { 0.3 } else { 0.0 },
        |x: &[f64]| x[0] * x[0],
    );
    validate(&sys, 256, 0)?;
    let traj = closed_loop(&sys, &[4.0], 0.95, 200, 25)?;
    println!("modes   {:?}", traj.modes);
    println!("horizon {:?}", traj.horizons);
    println!("final x {:.6}, discounted running cost {:.6}", traj.states[25][0], running_cost(&traj));
    Ok(())
}
